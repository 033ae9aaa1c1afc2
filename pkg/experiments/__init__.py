# Experiments package initialization
