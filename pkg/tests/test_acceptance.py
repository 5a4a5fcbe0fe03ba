"""Exit criteria, one test per criterion, each at its pinned tolerance.

A PASS/FAIL line per criterion is printed in the "acceptance criteria"
section of the pytest summary.
"""

import json
import random
import time
from collections import Counter
from importlib import resources


from socialrag.corpus import CorpusFilter, Post, ingest_corpus
from socialrag.evalstats import coleman_liau, mann_whitney_u, median_iqr, p_from_u
from socialrag.index import DEFAULT_K, build_index, load_index, save_index
from socialrag.llm import MockBackend, MockRule, MockScript
from socialrag.pipeline import PipelineConfig, answer_query, estimate_tokens, segment_post
from socialrag.synthetic import synthetic_dump_lines, synthetic_posts

from oracles import brute_force_exact_p, brute_force_ranking

VOCAB = [f"w{i}" for i in range(30)]


def _random_docs(rng, n):
    return [
        (f"d{i:03d}", " ".join(rng.choices(VOCAB, k=rng.randint(0, 6))), " ".join(rng.choices(VOCAB, k=rng.randint(1, 40))))
        for i in range(n)
    ]


def test_c01_bm25f_matches_brute_force_oracle():
    rng = random.Random(20240101)
    started = time.perf_counter()
    checked = 0
    for _ in range(200):
        docs = _random_docs(rng, rng.randint(1, 50))
        index = build_index([Post(d, t, b, 0) for d, t, b in docs])
        for _ in range(rng.randint(1, 30)):
            query = " ".join(rng.choices(VOCAB + ["unseen"], k=rng.randint(1, 5)))
            expected = brute_force_ranking(docs, query, k=len(docs))
            got = index.search(query, k=len(docs))
            assert [r.doc_id for r in got] == [d for d, _ in expected]
            for r, (_, score) in zip(got, expected):
                assert abs(r.score - score) < 1e-9
            checked += 1
    elapsed = time.perf_counter() - started
    print(f"C1: {checked} queries over 200 corpora in {elapsed:.2f}s")
    assert elapsed < 10.0


def test_c02_bm25f_hand_value():
    index = build_index([Post("d", "", "xylazine", 0)])
    assert abs(index.score(["xylazine"], "d") - 0.130765) <= 1e-6


def _tied_samples(rng, count):
    pairs = [(n1, n2) for n1 in range(1, 10) for n2 in range(1, 10) if n1 + n2 <= 10]
    for i in range(count):
        n1, n2 = pairs[i % len(pairs)]
        hi = rng.randint(1, 5)
        yield [rng.randint(0, hi) for _ in range(n1)], [rng.randint(0, hi) for _ in range(n2)]


def test_c03a_exact_p_matches_full_enumeration():
    rng = random.Random(3)
    for x, y in _tied_samples(rng, 500):
        r = mann_whitney_u(x, y)
        assert r.method == "exact"
        assert abs(r.p_two_tailed - brute_force_exact_p(x, y)) <= 1e-12


def test_c03b_normal_approximation_within_band_of_exact():
    rng = random.Random(3)
    worst = 0.0
    misses = []
    for x, y in _tied_samples(rng, 500):
        exact = mann_whitney_u(x, y).p_two_tailed
        if not 0.05 <= exact <= 0.95:
            continue
        ties = [t for t in Counter(x + y).values() if t > 1]
        _, approx = p_from_u(mann_whitney_u(x, y).u1, len(x), len(y), ties or None)
        gap = abs(approx - exact)
        worst = max(worst, gap)
        if gap > 0.08:
            misses.append((len(x), len(y), round(exact, 4), round(approx, 4)))
    print(f"C3b: worst |approx - exact| = {worst:.4f}; {len(misses)} samples outside 0.08, e.g. {misses[:3]}")
    assert not misses


def test_c04_paper_consistency_band():
    _, p_cov = p_from_u(733.0, 37, 39)
    assert 0.90 <= p_cov <= 0.91
    assert abs(p_cov - 0.89) <= 0.05
    _, p_hal = p_from_u(859.0, 37, 39)
    assert 0.15 <= p_hal <= 0.16
    # most hallucination ratings are 0: tie correction pulls p towards the reported .10
    _, p_hal_tied = p_from_u(859.0, 37, 39, tie_groups=[66, 10])
    assert p_hal_tied < p_hal


def _random_text(rng):
    words = []
    for _ in range(rng.randint(1, 60)):
        word = "".join(rng.choices("abcdefghijklmnopqrstuvwxyzé", k=rng.randint(1, 10)))
        if rng.random() < 0.15:
            word += rng.choice([".", "!", "?", "?!", "..."])
        words.append(word)
    return words


def test_c05_coleman_liau():
    assert abs(coleman_liau("abcde fghij klmno pqrst uvwxy.") - 7.68) <= 1e-9
    assert abs(coleman_liau("Hi.") - (-33.64)) <= 1e-9
    rng = random.Random(5)
    for _ in range(1000):
        words = _random_text(rng)
        messy = "".join(w + rng.choice([" ", "  ", "\n", "\t", " \n "]) for w in words)
        assert coleman_liau(" ".join(words)) == coleman_liau("  " + messy)


def test_c06_quartiles():
    s = median_iqr([5])
    assert (s.median, s.q1, s.q3) == (5, 5, 5)
    s = median_iqr([4, 4, 5, 5, 5])
    assert (s.median, s.q1, s.q3) == (5, 4, 5)
    s = median_iqr([1, 2, 3, 4])
    assert (s.median, s.q1, s.q3) == (2.5, 1.75, 3.25)
    rng = random.Random(6)
    for _ in range(1000):
        values = sorted(rng.uniform(-100, 100) if rng.random() < 0.5 else rng.randint(1, 5) for _ in range(rng.randint(1, 50)))
        shuffled = values[:]
        rng.shuffle(shuffled)
        assert median_iqr(values) == median_iqr(shuffled)


def test_c07_segmentation_properties():
    rng = random.Random(7)
    for _ in range(1000):
        words = _random_text(rng)
        text = " ".join(words)
        budget = rng.randint(1, 80)
        segments = segment_post(text, budget)
        assert all(estimate_tokens(s.text) <= budget for s in segments)
        assert [w for s in segments for w in s.text.split()] == words


def test_c08_pipeline_determinism():
    index = build_index(synthetic_posts(500, seed=8))
    query = "What are the side effects of xylazine?"
    started = time.perf_counter()
    outputs = set()
    for _ in range(5):
        bundle = answer_query(index, MockBackend(), PipelineConfig(layer2_budget=400), query=query)
        outputs.add(bundle.to_json(include_timing=False))
    for cap in (1, 2, 4, 8):
        bundle = answer_query(index, MockBackend(), PipelineConfig(layer2_budget=400, max_parallel=cap), query=query)
        outputs.add(bundle.to_json(include_timing=False).replace(f'"max_parallel": {cap}', '"max_parallel": 4'))
    elapsed = time.perf_counter() - started
    print(f"C8: 9 runs in {elapsed:.2f}s, {len(outputs)} distinct output(s)")
    assert len(outputs) == 1
    assert elapsed < 10.0


def test_c09_no_answer_exclusion():
    rng = random.Random(9)
    drugs = ["xylazine", "ketamine"]
    for scenario in range(100):
        n = rng.randint(1, 12)
        all_flagged = scenario == 0 or rng.random() < 0.1
        posts = []
        for i in range(n):
            flagged = all_flagged or rng.random() < 0.4
            marker = f"FLAG{i:02d}" if flagged else f"keep{i:02d}"
            sentences = [f"{rng.choice(drugs)} note {j} {marker}." for j in range(rng.randint(1, 30))]
            posts.append(Post(f"p{i:02d}", "", " ".join(sentences), 0))
        script = MockScript(
            rules=(MockRule(r"FLAG(\d\d)", "NO ANSWER FOUND flagged-summary-text"),),
            fallback_sentences=rng.randint(1, 4),
        )
        backend = MockBackend(script)
        config = PipelineConfig(
            segment_budget=rng.randint(80, 200), layer2_budget=rng.randint(100, 400), max_parallel=rng.randint(1, 4)
        )
        bundle = answer_query(build_index(posts), backend, config, query="xylazine ketamine")
        layer2_prompts = [r.last_user_message for r in backend.requests[len(bundle.segments):]]
        assert len(layer2_prompts) == bundle.accounting["layer2_calls"]
        for prompt in layer2_prompts:
            assert "flagged-summary-text" not in prompt
            for s in bundle.layer1:
                if s.no_answer:
                    assert s.text not in prompt
        if all(s.no_answer for s in bundle.layer1):
            assert bundle.status == "no_information"
            assert layer2_prompts == []
        else:
            assert bundle.status == "answered"


def _check_provenance(bundle):
    retrieved = {r.doc_id for r in bundle.retrieval}
    segment_keys = {(s.doc_id, s.seg_index) for s in bundle.segments}
    assert {s.doc_id for s in bundle.segments} <= retrieved
    assert len(bundle.layer1) == len(bundle.segments)
    assert {(s.doc_id, s.seg_index) for s in bundle.layer1} == segment_keys
    survivors = [f"l1-{i}" for i, s in enumerate(bundle.layer1) if not s.no_answer]
    if bundle.status == "answered":
        first_round = [i for b in bundle.aggregation[0]["batches"] for i in b["inputs"]]
        assert first_round == survivors
        assert bundle.aggregation[-1]["final"]
    else:
        assert bundle.final_summary == ""


def test_c10_end_to_end_table1(tmp_path):
    started = time.perf_counter()
    store, stats = ingest_corpus(
        synthetic_dump_lines(2000, seed=10), CorpusFilter(keywords=["xylazine", "ketamine"]), tmp_path / "corpus"
    )
    save_index(build_index(store), tmp_path / "index")
    index = load_index(tmp_path / "index")
    table = (resources.files("socialrag") / "data" / "table1_queries.tsv").read_text(encoding="utf-8")
    queries = [line.split("\t", 1)[1] for line in table.splitlines()[1:] if line.strip()]
    assert len(queries) == 20
    script_json = (resources.files("socialrag") / "data" / "mock_script.json").read_text(encoding="utf-8")
    backend = MockBackend(MockScript.from_dict(json.loads(script_json)))
    statuses = Counter()
    for query in queries:
        bundle = answer_query(index, backend, PipelineConfig(), query=query)
        assert bundle.status in ("answered", "no_information")
        _check_provenance(bundle)
        statuses[bundle.status] += 1
    elapsed = time.perf_counter() - started
    print(f"C10: {dict(statuses)} in {elapsed:.2f}s (corpus kept {stats.kept} of {stats.total_read})")
    assert elapsed < 30.0


def test_c11_index_round_trip(tmp_path):
    rng = random.Random(11)
    docs = _random_docs(rng, 100)
    index = build_index([Post(d, t, b, rng.randint(0, 10**9)) for d, t, b in docs])
    save_index(index, tmp_path / "idx")
    loaded = load_index(tmp_path / "idx")
    for _ in range(100):
        query = " ".join(rng.choices(VOCAB, k=rng.randint(1, 4)))
        assert loaded.search(query, 10) == index.search(query, 10)


def test_c12_default_retrieval_depth():
    assert DEFAULT_K == 50
    assert PipelineConfig().k == 50
    index = build_index([Post(f"d{i:03d}", "", "xylazine wounds", 0) for i in range(120)])
    assert len(index.search("xylazine")) == 50
    bundle = answer_query(index, MockBackend(), query="xylazine")
    assert len(bundle.retrieval) == 50
    assert bundle.config["k"] == 50
