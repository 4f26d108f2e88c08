"""End-to-end acceptance checks, one test (one pass/fail line) per criterion.

Each test exercises the package the way the docs advertise it: exact
identities, seeded Monte Carlo with pinned root seeds, and the CLI plumbing.
Tolerances and sample counts live next to each assertion.
"""

import json
import math
import threading
import time
import random

import httpx
import pytest

import oracles
from chunklab.chunker import plan_chunks
from chunklab.cli import main
from chunklab.degradation import (
    DcLossModel,
    Linear,
    PowerLaw,
    Saturating,
    crossover,
    fit_power_law,
    loss_at,
)
from chunklab.costmodel import LatencyCurve, PriceSheet, costs, dc_faster, dc_latency
from chunklab.estimator import EstimatorConfig, estimate_chunk_size, exhaustive_search
from chunklab.fidelity import (
    FidelityTriple,
    compose_fidelity,
    first_order_error,
    measure_triple,
    to_losses,
)
from chunklab.llm_client import EndpointConfig, complete
from chunklab.orchestrator import PipelineConfig, run_pipeline, run_single
from chunklab.records import dump_line, new_manifest, read_jsonl, run_record, write_jsonl
from chunklab.tasks import gen_alias_chain, gen_kv, gen_math, ideal_artifact
from chunklab.workers import NoisyBackend, OracleBackend, run_worker


def _pass(criterion: int, message: str) -> None:
    print(f"criterion {criterion}: PASS ({message})")


# ---------------------------------------------------------------------------
# Shared interior-optimum profile: math k=1, cubic worker noise, constant per-chunk
# aggregation floor (one artifact token per chunk, linear manager noise).
# Analytic error model: lam(c) = A_W * c^3 + S_M * ceil(T / c); only the
# chunk holding the global minimum is critical for the workers.

INTERIOR_TOTAL = 4096
INTERIOR_GRID = (128, 256, 512, 1024, 2048)
INTERIOR_A_W = 1e-9
INTERIOR_S_M = 0.05


def interior_backends(worker_seed=71, manager_seed=72):
    worker = NoisyBackend(PowerLaw(INTERIOR_A_W, 3.0), seed=worker_seed)
    manager = NoisyBackend(Linear(INTERIOR_S_M, 0.0), seed=manager_seed)

    def factory(chunk_size, total_length):
        return PipelineConfig(
            plan=plan_chunks(total_length, chunk_size, 0),
            worker=worker,
            manager=manager,
        )

    return factory


def interior_lambda(c):
    return INTERIOR_A_W * c**3 + INTERIOR_S_M * math.ceil(INTERIOR_TOTAL / c)


def test_criterion_1_fidelity_identities():
    rng = random.Random(11)
    started = time.perf_counter()
    for _ in range(100_000):
        triple = FidelityTriple(
            rng.uniform(1e-6, 1.0), rng.uniform(1e-6, 1.0), rng.uniform(1e-6, 1.0)
        )
        losses = to_losses(triple)
        assert abs(-math.log(compose_fidelity(triple)) - losses.l_sys) < 1e-12
        expansion = first_order_error(triple)
        eps = (1.0 - triple.rho_task, 1.0 - triple.rho_agg, 1.0 - triple.rho_model)
        second_order = eps[0] * eps[1] + eps[0] * eps[2] + eps[1] * eps[2]
        assert 0.0 <= expansion.residual <= second_order
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    _pass(1, f"1e5 triples, additive identity < 1e-12, residual bounded, {elapsed:.2f}s")


def test_criterion_2_telescoping_measurement():
    noisy_w = NoisyBackend(Linear(2e-3, 0.0), seed=21)
    noisy_m = NoisyBackend(Linear(5e-3, 0.0), seed=22)
    combos = [
        (noisy_w, noisy_m),
        (noisy_w, OracleBackend()),
        (OracleBackend(), noisy_m),
        (OracleBackend(), OracleBackend()),
    ]
    unclamped = clamped = 0
    for i in range(1_000):
        kind = i % 3
        if kind == 0:
            inst = gen_kv(120, seed=i)
        elif kind == 1:
            inst = gen_math(120, 2, "smallest", seed=i)
        else:
            inst = gen_alias_chain(5, 116, seed=i)  # 4 links on top of filler
        worker, manager = combos[i % 4]
        run = run_pipeline(
            inst,
            PipelineConfig(
                plan=plan_chunks(inst.total_length, 30, 0), worker=worker, manager=manager
            ),
        )
        measured = measure_triple(run.scores)
        if measured.clamped_stages:
            clamped += 1
            continue
        unclamped += 1
        reconstructed = compose_fidelity(measured.triple) * run.scores.s_truth
        assert abs(reconstructed - run.scores.s_real_agg_real_art) <= 1e-9
    assert unclamped >= 900  # clamping is the rare lucky-noise path
    _pass(2, f"{unclamped} unclamped runs reconstruct S(h(a)) within 1e-9, {clamped} clamped")


def test_criterion_3_crossover_agreement():
    # analytic: quadratic single-pass loss vs pure linear pipeline overhead
    strong = PowerLaw(1e-6, 2.0)
    dc_model = DcLossModel(0.0, 1e-3, 0.0)
    t0 = crossover(strong, dc_model, 1024)
    assert t0 == 1001
    assert t0 == oracles.crossover_scan(
        lambda t: 1e-6 * t * t, lambda t: 1e-3 * t, 5_000
    )

    # end to end: alias chain where every chunk is critical, so pipeline
    # accuracy is exp(-1e-3 T) and single-pass accuracy exp(-1e-6 T^2)
    grid = (200, 600, 1000, 1400, 1800)
    seeds_per_length = 500
    single_backend = NoisyBackend(strong, seed=31)
    dc_worker = NoisyBackend(Linear(1e-3, 0.0), seed=32)
    for length in grid:  # structural precondition: no chunk without a link
        probe = gen_alias_chain(9, length - 8, seed=0)  # 8 links, total == length
        assert probe.total_length == length
        plan = plan_chunks(length, 1024, 0)
        for cid, span in enumerate(plan.boundaries):
            assert ideal_artifact(probe, None, cid, span=span).content

    mean_single = {}
    mean_dc = {}
    for length in grid:
        plan = plan_chunks(length, 1024, 0)
        cfg = PipelineConfig(plan=plan, worker=dc_worker, manager=OracleBackend())
        s_total = d_total = 0.0
        for s in range(seeds_per_length):
            inst = gen_alias_chain(9, length - 8, seed=30_000 + s)
            answer, _ = run_single(inst, single_backend)
            s_total += answer == inst.ground_truth
            run = run_pipeline(inst, cfg)
            d_total += run.manager_answer == inst.ground_truth
        mean_single[length] = s_total / seeds_per_length
        mean_dc[length] = d_total / seeds_per_length

    wins = [length for length in grid if mean_dc[length] > mean_single[length]]
    assert wins, "pipeline never overtook the single pass on the grid"
    empirical = wins[0]
    assert abs(empirical - t0) <= 400  # one grid step
    assert mean_single[200] > mean_dc[200]  # bracket: single wins well below T0
    assert mean_dc[1800] > mean_single[1800]
    _pass(3, f"analytic T0={t0}, scan oracle agrees, empirical crossover at {empirical}")


def test_criterion_4_regime_reproduction(tmp_path, capsys):
    # (a) retrieval stays near-perfect at every chunk size
    started = time.perf_counter()
    kv_sizes = (1024, 2048, 4096, 8192, 16384, 32768, 65536)
    worker = NoisyBackend(PowerLaw(1e-9, 1.2), seed=41)
    manager = NoisyBackend(PowerLaw(1e-9, 1.2), seed=42)
    totals = {size: 0.0 for size in kv_sizes}
    for s in range(200):
        inst = gen_kv(65536, seed=40_000 + s)
        for size in kv_sizes:
            cfg = PipelineConfig(
                plan=plan_chunks(65536, size, 0), worker=worker, manager=manager
            )
            run = run_pipeline(inst, cfg)
            totals[size] += run.manager_answer == inst.ground_truth
    kv_means = {size: totals[size] / 200 for size in kv_sizes}
    assert all(m >= 0.98 for m in kv_means.values()), kv_means
    elapsed_a = time.perf_counter() - started
    assert elapsed_a < 120

    # (b) cubic worker noise vs per-chunk floor: interior optimum where the
    # analytic error model says it should be
    started = time.perf_counter()
    factory = interior_backends()
    score_sum = {c: 0.0 for c in INTERIOR_GRID}
    for s in range(200):
        inst = gen_math(INTERIOR_TOTAL, 1, "smallest", seed=20_000 + s)
        for c in INTERIOR_GRID:
            run = run_pipeline(inst, factory(c, INTERIOR_TOTAL))
            score_sum[c] += run.manager_answer == inst.ground_truth
    sweep = {c: score_sum[c] / 200 for c in INTERIOR_GRID}
    best = max(INTERIOR_GRID, key=lambda c: sweep[c])
    assert best not in (INTERIOR_GRID[0], INTERIOR_GRID[-1]), sweep  # interior maximum
    assert best == min(INTERIOR_GRID, key=interior_lambda), sweep
    elapsed_b = time.perf_counter() - started
    assert elapsed_b < 120

    # (c) alias chain under a sub-chain artifact budget: structure, not model
    # quality, caps the pipeline; decompose must say so
    started = time.perf_counter()
    rows = []
    dc_total = single_total = 0.0
    for s in range(200):
        inst = gen_alias_chain(257, 65536 - 256, seed=50_000 + s, artifact_budget=2)
        cfg = PipelineConfig(
            plan=plan_chunks(inst.total_length, 4096, 0),
            worker=OracleBackend(),
            manager=OracleBackend(),
        )
        run = run_pipeline(inst, cfg)
        dc_total += run.manager_answer == inst.ground_truth
        answer, _ = run_single(inst, OracleBackend())
        single_total += answer == inst.ground_truth
        rows.append(run_record(inst, run))
    assert single_total / 200 == 1.0
    assert dc_total / 200 < single_total / 200

    results = tmp_path / "alias_runs.jsonl"
    write_jsonl(
        str(results),
        new_manifest("run", {}, 0, None, [str(results)], True),
        rows,
    )
    report = tmp_path / "alias_report.jsonl"
    assert main(["decompose", "--results", str(results), "--out", str(report)]) == 0
    printed = capsys.readouterr().out
    assert "regime TaskDominated" in printed
    _, report_rows = read_jsonl(str(report))
    assert report_rows[0]["regime"] == "TaskDominated"
    elapsed_c = time.perf_counter() - started
    assert elapsed_c < 120
    _pass(
        4,
        f"kv >= 0.98 all sizes ({elapsed_a:.0f}s); math optimum at {best} "
        f"({elapsed_b:.0f}s); alias TaskDominated ({elapsed_c:.0f}s)",
    )


def test_criterion_5_estimator_near_optimality():
    dev_set = [gen_math(INTERIOR_TOTAL, 1, "smallest", seed=60_000 + s) for s in range(30)]
    factory = interior_backends()

    exhaustive = exhaustive_search(
        EstimatorConfig(candidates=INTERIOR_GRID, budget_m=1, seed=0), dev_set, factory
    )
    exh_mean = {m.chunk_size: m.mean_score for m in exhaustive.means}
    best = exhaustive.chosen
    best_idx = INTERIOR_GRID.index(best)

    def trials(m):
        regrets = []
        near = 0
        for trial in range(100):
            cfg = EstimatorConfig(candidates=INTERIOR_GRID, budget_m=m, seed=1_000 * m + trial)
            report = estimate_chunk_size(cfg, dev_set, factory)
            assert report.total_evaluations == m * len(INTERIOR_GRID)
            near += abs(INTERIOR_GRID.index(report.chosen) - best_idx) <= 1
            regrets.append(exh_mean[best] - exh_mean[report.chosen])
        return near, sum(regrets) / len(regrets)

    near_5, regret_5 = trials(5)
    assert near_5 >= 90, f"only {near_5}/100 trials within one grid step"
    near_3, regret_3 = trials(3)
    near_10, regret_10 = trials(10)
    assert regret_3 >= regret_5 >= regret_10
    _pass(
        5,
        f"m=5 within one step in {near_5}/100, regret {regret_3:.4f} >= "
        f"{regret_5:.4f} >= {regret_10:.4f}, call count m*|grid| exact",
    )


def test_criterion_6_noisy_backend_calibration():
    draws = 100_000
    cases = [
        (Linear(1e-3, 0.0), 1000),  # exactly 1 nat: p = 1 - 1/e
        (PowerLaw(1e-6, 2.0), 500),
        (PowerLaw(2e-7, 1.8), 2000),
        (Saturating(2.0, 1000), 1000),
        (Linear(5e-4, 0.1), 800),
    ]
    checked = []
    for i, (model, length) in enumerate(cases):
        inst = gen_kv(length, seed=600 + i)
        backend = NoisyBackend(model, seed=61_000 + i)
        hits = 0
        for draw in range(draws):
            out = run_worker(backend, inst, None, draw, span=(0, length))
            hits += "corrupted" in out.flags
        freq = hits / draws
        expected = -math.expm1(-loss_at(model, length))
        checked.append((freq, expected))
    # include the analytic anchor explicitly
    assert checked[0][1] == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)
    for freq, expected in checked:
        sigma = math.sqrt(expected * (1.0 - expected) / draws)
        assert abs(freq - expected) <= 3.0 * sigma, (freq, expected)
    _pass(6, "five (model, L) pairs within 3 binomial sigmas of 1 - exp(-g(L))")


def test_criterion_7_cost_latency_calculus():
    affine = LatencyCurve(0.5, 1e-4)
    assert dc_latency(affine, affine, 128000, 8, 2000) == 2.8
    assert affine.latency(128000) == 13.3
    assert dc_faster(affine, affine, affine, 128000, 8, 2000) is True

    prices = PriceSheet(2.5e-6, 1e-5, 1.5e-7, 6e-7, 1.5e-7, 6e-7)
    single_cost, dc_cost = costs(prices, 128000, 200, 800, 1000)
    assert single_cost == 0.322
    assert dc_cost == 0.01995

    # strictness at the equality boundary: ties are not "faster"
    single = LatencyCurve(1.0, 0.0)
    manager = LatencyCurve(0.0, 0.0)
    assert single.latency(500) == dc_latency(single, manager, 500, 5, 50)
    assert dc_faster(single, single, manager, 500, 5, 50) is False
    _pass(7, "2.8s vs 13.3s and 0.01995 vs 0.322 exact; equality is not faster")


def test_criterion_8_power_law_fit():
    truth = PowerLaw(2e-7, 1.8)
    points = [(L, -math.expm1(-loss_at(truth, L))) for L in (1e3, 3e3, 1e4)]
    fit = fit_power_law(points)
    assert fit.model.a == pytest.approx(2e-7, rel=1e-9)
    assert fit.model.beta == pytest.approx(1.8, rel=1e-9)
    assert not fit.degenerate

    # published retrieval accuracies for the small hosted model; exact runs
    # (error 0) carry no information for a log-log fit and are censored
    series = {
        1024: 1.00, 2048: 1.00, 4096: 1.00, 8192: 1.00,
        16384: 1.00, 32768: 0.99, 65536: 0.86, 131072: 0.60,
    }
    fit = fit_power_law([(L, 1.0 - acc) for L, acc in sorted(series.items())])
    assert fit.points_used == 3
    assert fit.model.beta > 1.0
    _pass(8, f"round trip rel 1e-9; hosted-model series beta={fit.model.beta:.3f} > 1")


def test_criterion_9_determinism_and_plumbing(tmp_path, monkeypatch):
    # byte-identical reruns of seeded commands
    ds = tmp_path / "ds.jsonl"
    argv = ["generate", "--task", "kv", "--n", "4", "--pairs", "240",
            "--seed", "9", "--out", str(ds), "--normalize-timestamps"]
    assert main(argv) == 0
    first = ds.read_bytes()
    assert main(argv) == 0
    assert ds.read_bytes() == first

    runs = tmp_path / "runs.jsonl"
    run_argv = ["run", "--dataset", str(ds), "--chunk-size", "30",
                "--worker", "noisy", "--worker-model", "linear:0.01,0",
                "--worker-seed", "3", "--out", str(runs), "--normalize-timestamps"]
    assert main(run_argv) == 0
    run_bytes = runs.read_bytes()
    assert main(run_argv) == 0
    assert runs.read_bytes() == run_bytes

    # order-independence across worker parallelism (1 vs one-thread-per-chunk)
    inst = gen_math(240, 2, "smallest", seed=91)
    plan = plan_chunks(240, 30, 0)
    dumps = []
    for par in (1, plan.num_chunks):
        cfg = PipelineConfig(
            plan=plan,
            worker=NoisyBackend(PowerLaw(1e-3, 1.1), seed=92),
            manager=NoisyBackend(Linear(1e-3, 0.0), seed=93),
            max_parallel_workers=par,
        )
        rec = run_record(inst, run_pipeline(inst, cfg))
        del rec["max_parallel_workers"]
        dumps.append(dump_line(rec))
    assert dumps[0] == dumps[1]

    # mock-server client behavior: retry with backoff, temperature always 0,
    # in-flight requests capped by max_concurrent
    monkeypatch.setenv("CHUNKLAB_API_KEY", "sk-acceptance")
    payloads = []
    calls = []

    def flaky(request):
        payloads.append(json.loads(request.content))
        calls.append(1)
        if len(calls) <= 2:
            return httpx.Response(429, json={})
        return httpx.Response(
            200, json={"choices": [{"message": {"content": "ok"}}],
                       "usage": {"prompt_tokens": 1, "completion_tokens": 1}}
        )

    sleeps = []
    exchange = complete(
        EndpointConfig(base_url="http://mock", model_name="m"),
        system="s", user="u",
        transport=httpx.MockTransport(flaky), sleeper=sleeps.append,
    )
    assert exchange.attempt_count == 3
    assert 1.0 <= sleeps[0] <= 1.25 and 2.0 <= sleeps[1] <= 2.5

    cap_cfg = EndpointConfig(base_url="http://mock/cap9", model_name="m", max_concurrent=2)
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def slow(request):
        payloads.append(json.loads(request.content))
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return httpx.Response(
            200, json={"choices": [{"message": {"content": "ok"}}]}
        )

    transport = httpx.MockTransport(slow)
    threads = [
        threading.Thread(target=complete, args=(cap_cfg, "s", f"u{i}"),
                         kwargs={"transport": transport})
        for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2
    assert payloads and all(p["temperature"] == 0 for p in payloads)
    _pass(9, "byte-identical reruns, parallelism-independent records, client plumbing")
