"""Fixture task model: answers with the first choice and scores labels by mention."""

import json
import sys

request = json.load(sys.stdin)

if request["op"] == "generate":
    text = request["text"]
    first = text.split(" [choice] ")[1].split(" [")[0] if " [choice] " in text else "neutral"
    if text.endswith(" [answer]"):
        output = f"{first} [rationale] It is {first}. <eos>"
    elif " [answer] " in text:
        output = "Because the question says so. <eos>"
    else:
        output = f"It is {first}. [answer] {first} <eos>"
    print(json.dumps({"text": output}))
elif request["op"] == "loglik":
    segment = request["context"].rsplit("[rationale]", 1)[-1]
    scores = [0.0 if c in segment else -5.0 for c in request["candidates"]]
    print(json.dumps({"log_likelihoods": scores}))
else:
    sys.stderr.write(f"unknown op {request['op']}\n")
    sys.exit(2)
