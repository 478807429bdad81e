#!/usr/bin/env python3
"""Reference worker for the external pair-encoder protocol.

The pairtask external backend spawns a worker process and exchanges one JSON
object per line over stdin/stdout:

    {"op":"init","config":{...}}                       -> {"ok":true}
    {"op":"begin_phase","lr":1e-6,"warmup_steps":1000} -> {"ok":true}
    {"op":"forward","query":"...","text":"..."}        -> {"logits":[l0,l1]}
    {"op":"train_step","examples":[{"query":...,"text":...,"target":0|1},..]}
                                                       -> {"loss":0.69}
    {"op":"save","dir":"/path"}                        -> {"ok":true}
    {"op":"load","dir":"/path"}                        -> {"ok":true}
    {"op":"shutdown"}                                  -> (exit)

Any response may instead be {"error":"message"}.

This mock scores pairs by a trainable per-token overlap weight — enough to
exercise the whole pipeline end to end without a GPU. A real adapter keeps
the same loop but backs forward/train_step with a pretrained pair encoder
(tokenizer, model with a 2-way head, optimizer with linear warmup) and
saves/loads its checkpoint files under the given directory.
"""

import json
import math
import os
import sys


class MockPairEncoder:
    def __init__(self):
        self.weights = {}
        self.bias = 0.0
        self.lr = 1e-2
        self.seed = 0

    def init(self, config):
        self.seed = int(config.get("seed", 0))

    def begin_phase(self, lr, warmup_steps):
        # The mock ignores warmup; a real adapter configures its scheduler.
        self.lr = max(lr, 1e-6)

    def _score(self, query, text):
        q = set(query.lower().split())
        t = text.lower().split()
        s = self.bias
        for token in t:
            if token in q:
                s += self.weights.get(token, 0.25)
        return s

    def forward(self, query, text):
        return [0.0, self._score(query, text)]

    def train_step(self, examples):
        total = 0.0
        for ex in examples:
            logit = self._score(ex["query"], ex["text"])
            p = 1.0 / (1.0 + math.exp(-logit))
            y = float(ex["target"])
            total += -(y * math.log(max(p, 1e-12)) + (1 - y) * math.log(max(1 - p, 1e-12)))
            grad = p - y
            q = set(ex["query"].lower().split())
            for token in ex["text"].lower().split():
                if token in q:
                    self.weights[token] = self.weights.get(token, 0.25) - self.lr * grad
            self.bias -= self.lr * grad
        return total / max(len(examples), 1)

    def save(self, directory):
        with open(os.path.join(directory, "mock_params.json"), "w") as f:
            json.dump({"weights": self.weights, "bias": self.bias}, f)

    def load(self, directory):
        with open(os.path.join(directory, "mock_params.json")) as f:
            state = json.load(f)
        self.weights = state["weights"]
        self.bias = state["bias"]


def main():
    encoder = MockPairEncoder()
    for line in sys.stdin:
        try:
            request = json.loads(line)
            op = request["op"]
            if op == "init":
                encoder.init(request.get("config") or {})
                response = {"ok": True}
            elif op == "begin_phase":
                encoder.begin_phase(request["lr"], request.get("warmup_steps", 0))
                response = {"ok": True}
            elif op == "forward":
                response = {"logits": encoder.forward(request["query"], request["text"])}
            elif op == "train_step":
                response = {"loss": encoder.train_step(request["examples"])}
            elif op == "save":
                encoder.save(request["dir"])
                response = {"ok": True}
            elif op == "load":
                encoder.load(request["dir"])
                response = {"ok": True}
            elif op == "shutdown":
                break
            else:
                response = {"error": f"unknown op {op!r}"}
        except Exception as exc:  # surface instead of dying silently
            response = {"error": str(exc)}
        print(json.dumps(response), flush=True)


if __name__ == "__main__":
    main()
