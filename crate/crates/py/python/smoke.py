"""Smoke test for the rxdecode extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke.py`.
"""

import math

import rxdecode


def main():
    lm = rxdecode.LanguageModel.train(["ab", "ac"], order=2)
    assert abs(lm.score_next("a", "b") - lm.score_next("a", "c")) < 1e-12
    assert lm.score_next("a", "c") > lm.score_next("a", "a")
    assert rxdecode.LanguageModel.from_arpa(lm.to_arpa()).order == 2

    # uniform two-frame matrix over {blank, a}: P("a") = 0.75
    paths = rxdecode.decode([[0.0, 0.0], [0.0, 0.0]], ["<b>", "a"], k=2)
    assert paths[0][0] == "a"
    assert abs(math.exp(paths[0][2]) - 0.75) < 1e-6

    vocab = rxdecode.Vocabulary([("dolo", "tab"), ("folvite", "tab")])
    med, rank, _ = vocab.match_line(["tab doio", "tab dolo 650"], "topk_first")
    assert (med, rank) == ("dolo", 1)

    assert rxdecode.jaccard([{"a"}, {"a"}], [{"a"}, {"a", "b"}]) == (0.75, 1.0, 0.75)
    iou = rxdecode.box_iou((0, 0, 2, 2, 0), (0, 1, 2, 2, 0))
    assert abs(iou - 1 / 3) < 1e-12

    g = rxdecode.Grammar.bundled()
    name = rxdecode.Vocabulary.bundled().names()[0]
    assert g.count_lines(name, "tab") > 0

    report = rxdecode.run_pipeline(
        3,
        '{"sim": {"n_docs": 40, "noise_sigma": 0.0, "confusion_pairs": []},'
        ' "label": {"iteration": {"k_label": 20}}}',
    )
    assert report["mJI"] == 1.0, report
    print("smoke ok", report)


if __name__ == "__main__":
    main()
