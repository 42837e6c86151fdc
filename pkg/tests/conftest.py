import re


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, content in getattr(rep, "sections", []):
                if "stdout" in name:
                    lines += [s for s in content.splitlines() if re.match(r"(PASS|FAIL) criterion \d+", s)]
    if lines:
        terminalreporter.section("acceptance criteria")
        for s in sorted(set(lines), key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(s)
