"""Collects one status line per acceptance criterion for the terminal summary."""
LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return line
