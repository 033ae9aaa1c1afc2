"""
Text form of polynomial symbols.

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' INTEGER)?
    atom    := NUMBER ['j'] | NAME | '(' expr ')'
    NAME    := ('cstar' | 'psistar' | 'c' | 'psi' | 'n') ['_'] [INDEX]

`cstar_j` is psi*_j, `c_j` is psi_j and `n_j` is sugar for cstar_j*c_j. Mode
indices start at 1; a bare name refers to mode 1. Division is by constants only.
"""

import logging
import re
from typing import List, NamedTuple, Optional

from calculus.errors import SymbolParseError
from calculus.symbols import PolySymbol

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"""
    (?P<space>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?j?)
  | (?P<name>(?:cstar|psistar|psi|c|n)(?:_?\d+)?)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)

_NAME = re.compile(r'(cstar|psistar|psi|c|n)_?(\d+)?$')


class Token(NamedTuple):
    kind: str
    text: str
    offset: int


def tokenize(source: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN.match(source, pos)
        if match is None or match.end() == pos:
            raise SymbolParseError(f"Unexpected character {source[pos]!r}", source, pos)
        kind = match.lastgroup
        if kind != 'space':
            tokens.append(Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(Token('end', '', len(source)))
    return tokens


class SymbolParser:
    """Recursive-descent parser producing a PolySymbol over a fixed number of modes"""

    def __init__(self, source: str, modes: Optional[int] = None):
        self.source = source
        self.tokens = tokenize(source)
        self.pos = 0
        indices = [self._mode_of(tok) for tok in self.tokens if tok.kind == 'name']
        top = max(indices, default=1)
        self.modes = top if modes is None else modes
        if self.modes < 1:
            raise SymbolParseError("Mode count must be at least 1", source, 0)
        for tok in self.tokens:
            if tok.kind == 'name' and self._mode_of(tok) > self.modes:
                raise SymbolParseError(f"Mode index {self._mode_of(tok)} exceeds {self.modes} modes", source, tok.offset)

    def _mode_of(self, tok: Token) -> int:
        match = _NAME.match(tok.text)
        index = int(match.group(2)) if match.group(2) else 1
        if index < 1:
            raise SymbolParseError("Mode indices start at 1", self.source, tok.offset)
        return index

    def _peek(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, text: str) -> Token:
        tok = self._peek()
        if tok.text != text:
            found = repr(tok.text) if tok.kind != 'end' else 'end of input'
            raise SymbolParseError(f"Expected {text!r}, found {found}", self.source, tok.offset)
        return self._advance()

    def parse(self) -> PolySymbol:
        if self._peek().kind == 'end':
            raise SymbolParseError("Empty symbol", self.source, 0)
        result = self._expr()
        tok = self._peek()
        if tok.kind != 'end':
            raise SymbolParseError(f"Unexpected {tok.text!r}", self.source, tok.offset)
        return result

    def _expr(self) -> PolySymbol:
        result = self._term()
        while self._peek().text in ('+', '-'):
            op = self._advance().text
            rhs = self._term()
            result = result + rhs if op == '+' else result - rhs
        return result

    def _term(self) -> PolySymbol:
        result = self._unary()
        while self._peek().text in ('*', '/'):
            op = self._advance()
            rhs = self._unary()
            if op.text == '*':
                result = result * rhs
                continue
            if rhs.total_degree > 0 or rhs.is_zero():
                raise SymbolParseError("Division is only allowed by a non-zero constant", self.source, op.offset)
            result = result / rhs.terms[((0,) * self.modes, (0,) * self.modes)]
        return result

    def _unary(self) -> PolySymbol:
        tok = self._peek()
        if tok.text in ('+', '-'):
            self._advance()
            operand = self._unary()
            return operand if tok.text == '+' else -operand
        return self._power()

    def _power(self) -> PolySymbol:
        base = self._atom()
        if self._peek().text == '^':
            self._advance()
            tok = self._peek()
            if tok.kind != 'number' or not tok.text.isdigit():
                raise SymbolParseError("Exponent must be a non-negative integer", self.source, tok.offset)
            self._advance()
            base = base ** int(tok.text)
        return base

    def _atom(self) -> PolySymbol:
        tok = self._peek()
        if tok.kind == 'number':
            self._advance()
            value = complex(0, float(tok.text[:-1])) if tok.text.endswith('j') else float(tok.text)
            return PolySymbol.constant(value, self.modes)
        if tok.kind == 'name':
            self._advance()
            return self._variable(tok)
        if tok.text == '(':
            self._advance()
            inner = self._expr()
            self._expect(')')
            return inner
        found = repr(tok.text) if tok.kind != 'end' else 'end of input'
        raise SymbolParseError(f"Expected a number, variable or '(', found {found}", self.source, tok.offset)

    def _variable(self, tok: Token) -> PolySymbol:
        name = _NAME.match(tok.text).group(1)
        mode = self._mode_of(tok) - 1
        if name in ('cstar', 'psistar'):
            return PolySymbol.psi_star(mode, self.modes)
        if name in ('c', 'psi'):
            return PolySymbol.psi(mode, self.modes)
        return PolySymbol.number(mode, self.modes)


def parse_symbol(source: str, modes: Optional[int] = None) -> PolySymbol:
    """Parse symbol text; `modes` defaults to the largest mode index mentioned"""
    symbol = SymbolParser(source, modes).parse()
    logger.debug(f"Parsed {source!r} into {len(symbol.terms)} term(s) over {symbol.modes} mode(s)")
    return symbol
