"""Serve a synthetic suite over the HTTP wire protocol used by RemoteModel
and RemoteVerifier.

    python3 scripts/serve_synthetic.py --port 8765
    egb bench --model remote:http://127.0.0.1:8765 --verifier remote:http://127.0.0.1:8765 --tau 1.5

Useful for exercising the remote path end to end without a GPU.
"""
from __future__ import annotations

import argparse
import json
import math
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from egb.harness import OracleVerifier, SyntheticSuite
from egb.lm import SamplerSettings, StepBoundaryRule, generate_step

DEMO_SUITE = Path(__file__).resolve().parents[1] / "src" / "egb" / "data" / "demo_suite.json"


def top_logprobs(model, dist, top_n):
    order = sorted(range(len(dist.probs)), key=lambda i: (-dist.probs[i], i))
    out = []
    for i in order[:top_n]:
        if dist.probs[i] <= 0:
            break
        tid = int(dist.token_ids[i]) if dist.token_ids else i
        out.append({"id": tid, "logprob": math.log(dist.probs[i]), "text": model.token_text(tid)})
    return out


class SyntheticService:
    def __init__(self, suite: SyntheticSuite):
        self.model = suite.model
        self.verifier = OracleVerifier()

    def context(self, text: str):
        # synthetic prompts are a single line
        head, sep, rest = text.partition("\n")
        ctx = self.model.start(head + sep)
        for tid in self.model.encode(rest):
            ctx = self.model.append(ctx, tid)
        return ctx

    def next(self, body):
        dist = self.model.next_distribution(self.context(body["context_text"]))
        return {"tokens": top_logprobs(self.model, dist, int(body.get("top_n", 20))), "model_id": self.model.name}

    def generate_step(self, body):
        ctx = self.context(body["context_text"])
        rule = StepBoundaryRule(tuple(body["delimiters"]), int(body["max_tokens"]))
        temp = float(body.get("temperature", 1.0))
        sampler = SamplerSettings(greedy=True) if temp == 0 else SamplerSettings(temperature=temp)
        out = generate_step(self.model, ctx, rule, sampler, np.random.default_rng(int(body["seed"])))
        top_n = int(body.get("top_n", 20))
        events = [
            {"token_id": e.token_id, "position": e.position, "text": self.model.token_text(e.token_id),
             "top_logprobs": top_logprobs(self.model, e.distribution, top_n)}
            for e in out.events
        ]
        return {"text": out.text, "events": events, "stop_reason": out.stop_reason}

    def score(self, body):
        scores = self.verifier.score_steps(body["context"], body["steps"])
        return {"step_scores": scores, "scorer_id": "oracle"}


def make_handler(service: SyntheticService):
    routes = {"/v1/next": service.next, "/v1/generate_step": service.generate_step, "/v1/score": service.score}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            fn = routes.get(self.path)
            if fn is None:
                self.send_error(404)
                return
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                payload = json.dumps(fn(body)).encode("utf-8")
                code = 200
            except Exception as exc:  # report any failure to the client as a 400
                payload, code = json.dumps({"error": str(exc)}).encode("utf-8"), 400
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, fmt, *args):
            pass

    return Handler


def serve(suite_path: Path, host: str, port: int) -> ThreadingHTTPServer:
    suite = SyntheticSuite.from_json(json.loads(Path(suite_path).read_text(encoding="utf-8")))
    return ThreadingHTTPServer((host, port), make_handler(SyntheticService(suite)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--suite", default=str(DEMO_SUITE))
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    args = ap.parse_args()
    server = serve(args.suite, args.host, args.port)
    print(f"serving {args.suite} on http://{args.host}:{server.server_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
