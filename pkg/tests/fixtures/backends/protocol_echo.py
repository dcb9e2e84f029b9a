"""Fixture command for protocol tests; the first argument picks the behaviour."""

import json
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
request = json.load(sys.stdin)
if mode == "echo":
    print(json.dumps({"echo": request}))
elif mode == "sleep":
    time.sleep(5)
    print(json.dumps({}))
elif mode == "garbage":
    print("not json at all")
elif mode == "list":
    print(json.dumps([request]))
else:
    sys.stderr.write(f"unknown mode {mode}\n")
    sys.exit(3)
