"""Smoke test for the agentrouter extension module.

Build it first (see README), then run from the repository root:

    python python/smoke_test.py
"""

import json
import math
import pathlib
import sys
import tempfile

import agentrouter as ar

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "crates/core/tests/fixtures"


def check_metrics():
    assert ar.normalize_answer("The  Falcon!") == "falcon"
    assert ar.exact_match("the falcon", ["Falcon"]) == 1.0
    assert ar.token_f1("falcon takes over", ["falcon"]) == 0.5
    assert ar.top_k_clip([0.4, 0.4, 0.2], 1) == [(0, 1.0)]
    winner, tally = ar.weighted_vote(["Paris", "paris.", "Rome"], [0.3, 0.3, 0.4])
    assert winner == "Paris" and math.isclose(tally["paris"], 0.6)
    p = ar.soft_targets([1.0, 0.0], tau=0.25, eps=0.0)
    assert math.isclose(p[0], math.exp(4) / (math.exp(4) + 1), rel_tol=1e-12)
    assert ar.kl_loss(p, p) == 0.0
    try:
        ar.top_k_clip([0.5, 0.5], 0)
    except ValueError:
        pass
    else:
        raise AssertionError("k=0 accepted")


def check_graph():
    g = ar.Graph.build(
        "r1",
        "Who directed Vertigo?",
        "Vertigo was directed by Alfred Hitchcock in 1958.",
        ["Alfred Hitchcock"],
    )
    kinds = [k for k, _ in g.nodes()]
    assert kinds[0] == "query" and kinds.count("agent") == 24
    again = ar.Graph.from_json(g.to_json())
    assert again.to_json() == g.to_json()
    assert len(ar.embed_text("vertigo", 32)) == 32
    assert any(s == "Alfred Hitchcock" for s, _, _ in ar.extract_entities("Vertigo was directed by Alfred Hitchcock."))
    return g


def check_router(graph):
    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "config.toml"
        text = (FIXTURES / "config.toml").read_text()
        for name in ("train", "val", "cache"):
            text = text.replace(f'"{name}.jsonl"', json.dumps(str(FIXTURES / f"{name}.jsonl")))
        cfg.write_text(text.replace("seeds = [0, 1, 2]", "seeds = [0]").replace("epochs = 30", "epochs = 3"))
        out = pathlib.Path(tmp) / "run"
        print(ar.train_from_config(cfg, out), end="")
        router = ar.Router.load(out / "seed-0" / "checkpoint.bin")
        assert router.agent_order == ar.default_agent_ids()
        probs = router.probabilities(graph)
        assert len(probs) == 24 and math.isclose(sum(probs), 1.0, rel_tol=1e-9)
        answers = ["Alfred Hitchcock"] * 12 + ["Orson Welles"] * 12
        result = router.route(graph, answers, k=24)
        assert result["fused_answer"] in ("Alfred Hitchcock", "Orson Welles")
        print(ar.eval_from_config(cfg, pathlib.Path(tmp) / "eval", checkpoint=out), end="")


def main():
    check_metrics()
    graph = check_graph()
    check_router(graph)
    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
