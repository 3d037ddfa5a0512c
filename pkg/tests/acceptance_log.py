"""Shared record of acceptance outcomes, printed by the terminal-summary hook."""

LINES: list[str] = []


def record(number: int, passed: bool, detail: str) -> str:
    line = f"acceptance {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)
    return line
