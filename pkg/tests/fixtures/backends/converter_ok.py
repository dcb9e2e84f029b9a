"""Fixture declarative converter: one JSON request on stdin, one JSON response on stdout."""

import json
import sys

PINNED = {
    ("Where can personal mushrooms be kept fresh?", "refrigerator"): (
        "Personal mushrooms can be kept fresh in the refrigerator."
    ),
}

request = json.load(sys.stdin)
question, answer = request["question"], request["answer"]
sentence = PINNED.get((question, answer), f"{question.rstrip('?')} is answered by {answer}.")
print(json.dumps({"sentence": sentence}))
