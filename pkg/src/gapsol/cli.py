"""Command-line pipeline (placeholder; filled in after the library stabilizes)."""


def main(argv=None):
    raise SystemExit("CLI not wired up yet")
