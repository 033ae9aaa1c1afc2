# Calculus package initialization
