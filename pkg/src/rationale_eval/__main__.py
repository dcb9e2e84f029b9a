"""Allow `python -m rationale_eval`."""

from rationale_eval.main import main

if __name__ == "__main__":
    raise SystemExit(main())
