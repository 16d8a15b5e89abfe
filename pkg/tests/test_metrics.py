import dataclasses

import numpy as np
import pytest
from scipy.signal import butter, sosfilt

from vda import dsp, metrics
from vda.corpus import AlignedPair, AudioSignal
from vda.errors import DegenerateInputError, MetricError, PreconditionError

from conftest import identity_pair, make_speech_like, noisy_pair

RATE = 16000


@pytest.fixture(scope="module")
def sweep():
    return make_speech_like()


@pytest.fixture(scope="module")
def sweep_identity(sweep):
    return identity_pair(sweep)


# ---------------------------------------------------------------- snr_seg

def test_snr_seg_identity_hits_ceiling(sweep_identity):
    assert metrics.snr_seg(sweep_identity) == 35.0


def test_snr_seg_error_equals_signal(sweep):
    pair = AlignedPair(sweep, AudioSignal(2.0 * sweep.samples, RATE), 0, 1.0)
    assert metrics.snr_seg(pair) == pytest.approx(0.0, abs=1e-12)


def test_snr_seg_matches_per_frame_oracle():
    rng = np.random.default_rng(10)
    x = 0.3 * rng.standard_normal(RATE)
    d = x + 0.1 * rng.standard_normal(RATE)
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    got = metrics.snr_seg(pair)
    vals = []
    for i in range((RATE - 400) // 160 + 1):
        c = x[i * 160:i * 160 + 400]
        dd = d[i * 160:i * 160 + 400]
        ec = np.sum(c ** 2)
        if ec == 0.0:
            continue
        vals.append(min(max(10 * np.log10(ec / np.sum((c - dd) ** 2)), -10.0), 35.0))
    assert got == pytest.approx(np.mean(vals), abs=1e-9)


def test_snr_seg_all_silent_errors():
    pair = AlignedPair(AudioSignal(np.zeros(RATE), RATE), AudioSignal(np.zeros(RATE), RATE), 0, 1.0)
    with pytest.raises(DegenerateInputError):
        metrics.snr_seg(pair)


def test_segmental_clamps_on_adversarial_inputs():
    rng = np.random.default_rng(11)
    cases = []
    noise = AudioSignal(0.5 * rng.standard_normal(RATE), RATE)
    cases.append(AlignedPair(noise, AudioSignal(0.5 * rng.standard_normal(RATE), RATE), 0, 1.0))
    dc = AudioSignal(np.full(RATE, 0.3), RATE)
    cases.append(AlignedPair(dc, AudioSignal(np.full(RATE, -0.3), RATE), 0, 1.0))
    spiky = np.zeros(RATE)
    spiky[100] = 1.0
    cases.append(AlignedPair(AudioSignal(spiky, RATE), noise, 0, 1.0))
    for pair in cases:
        assert -10.0 <= metrics.snr_seg(pair) <= 35.0
        assert -10.0 <= metrics.fw_snr_seg(pair) <= 35.0


# ---------------------------------------------------------------- fw_snr_seg

def test_fw_snr_seg_identity(sweep_identity):
    assert metrics.fw_snr_seg(sweep_identity) == 35.0


def test_fw_snr_seg_rewards_out_of_band_noise():
    rng = np.random.default_rng(5)
    sos_lo = butter(6, 3000, btype="low", fs=RATE, output="sos")
    x = sosfilt(sos_lo, rng.standard_normal(RATE)) * 0.2
    sos_hi = butter(6, 4000, btype="high", fs=RATE, output="sos")
    n = sosfilt(sos_hi, rng.standard_normal(RATE))
    n *= np.sqrt(np.mean(x ** 2) / np.mean(n ** 2)) * 0.5
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(x + n, RATE), 0, 1.0)
    assert metrics.fw_snr_seg(pair) > metrics.snr_seg(pair)


def test_fw_snr_seg_single_frame_matches_band_oracle():
    rng = np.random.default_rng(6)
    x = 0.3 * rng.standard_normal(400)
    d = x + 0.05 * rng.standard_normal(400)
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    got = metrics.fw_snr_seg(pair)

    bank = dsp.make_filterbank("critical_band", RATE, 512, 25, 50.0)
    w = np.hamming(400)
    bc = np.sqrt((np.abs(np.fft.rfft(x * w, 512)) ** 2) @ bank.weights.T)
    bd = np.sqrt((np.abs(np.fft.rfft(d * w, 512)) ** 2) @ bank.weights.T)
    snrs = np.empty(25)
    for k in range(25):
        diff2 = (bc[k] - bd[k]) ** 2
        snrs[k] = 10 * np.log10(bc[k] ** 2 / diff2) if diff2 > 0 else 35.0
    snrs = np.clip(snrs, -10.0, 35.0)
    weights = bc ** 0.2
    oracle = np.sum(weights * snrs) / np.sum(weights)
    assert got == pytest.approx(oracle, abs=1e-9)


def test_frame_exclusion_masks_shared():
    # half-silent clean signal: both segmental metrics must use the same mask
    rng = np.random.default_rng(7)
    x = np.concatenate([np.zeros(RATE // 2), 0.3 * rng.standard_normal(RATE // 2)])
    d = x + 0.01 * rng.standard_normal(RATE)
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    fc = dsp.frame(pair.clean, 400, 160).frames
    mask = metrics._active_mask(fc)
    assert 0 < mask.sum() < len(mask)
    # both run without error and respect the same active frame set
    assert np.isfinite(metrics.snr_seg(pair))
    assert np.isfinite(metrics.fw_snr_seg(pair))


# ---------------------------------------------------------------- llr

def test_llr_identity(sweep_identity):
    assert metrics.llr(sweep_identity) == pytest.approx(0.0, abs=1e-9)


def test_llr_nonnegative():
    rng = np.random.default_rng(8)
    x = 0.3 * rng.standard_normal(RATE)
    for snr in (20.0, 5.0):
        d = x + np.sqrt(np.mean(x ** 2)) * 10 ** (-snr / 20) * rng.standard_normal(RATE)
        pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
        assert metrics.llr(pair) >= -1e-12


def _llr_oracle(x, d):
    """Independent LPC (Toeplitz solve) + explicit quadratic forms + trim."""
    order = 10
    vals = []
    w = np.hamming(400)
    for i in range((len(x) - 400) // 160 + 1):
        c = x[i * 160:i * 160 + 400] * w
        dd = d[i * 160:i * 160 + 400] * w
        rc = np.array([np.dot(c[: 400 - k], c[k:]) for k in range(order + 1)])
        rd = np.array([np.dot(dd[: 400 - k], dd[k:]) for k in range(order + 1)])
        if rc[0] <= 0 or rd[0] <= 0:
            continue
        toe_c = np.array([[rc[abs(i2 - j2)] for j2 in range(order)] for i2 in range(order)])
        toe_d = np.array([[rd[abs(i2 - j2)] for j2 in range(order)] for i2 in range(order)])
        ac = np.concatenate([[1.0], -np.linalg.solve(toe_c, rc[1:])])
        ad = np.concatenate([[1.0], -np.linalg.solve(toe_d, rd[1:])])
        big = np.array([[rc[abs(i2 - j2)] for j2 in range(order + 1)] for i2 in range(order + 1)])
        num = ad @ big @ ad
        den = ac @ big @ ac
        if num > 0 and den > 0:
            vals.append(np.log(num / den))
    vals = np.sort(vals)
    keep = max(1, int(round(0.95 * len(vals))))
    return float(np.mean(vals[:keep]))


def test_llr_matches_matrix_oracle():
    rng = np.random.default_rng(9)
    n = RATE
    e = 0.05 * rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = 0.8 * x[i - 1] + e[i]
    d = np.empty(n)
    d[0] = e[0]
    for i in range(1, n):
        d[i] = -0.8 * d[i - 1] + e[i]
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    assert metrics.llr(pair) == pytest.approx(_llr_oracle(x, d), abs=1e-9)


# ---------------------------------------------------------------- wss

def test_wss_identity(sweep_identity):
    assert metrics.wss(sweep_identity) == 0.0


def test_wss_nonnegative():
    rng = np.random.default_rng(12)
    x = 0.3 * rng.standard_normal(RATE)
    d = x + 0.2 * rng.standard_normal(RATE)
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    assert metrics.wss(pair) >= 0.0


def _wss_single_frame_oracle(x, d):
    bank = dsp.make_filterbank("critical_band", RATE, 512, 36, 50.0)
    w = np.hamming(400)

    def band_db(sig):
        p = (np.abs(np.fft.rfft(sig * w, 512)) ** 2) @ bank.weights.T
        p = np.maximum(p, p.max() * 1e-10)
        return 10 * np.log10(p)

    def weights_for(db):
        nb = len(db)
        loc = np.empty(nb - 1)
        for k in range(nb - 1):
            if db[k + 1] > db[k]:
                j = k
                while j < nb - 1 and db[j + 1] > db[j]:
                    j += 1
            else:
                j = k
                while j > 0 and db[j - 1] >= db[j]:
                    j -= 1
            loc[k] = db[j]
        wmax = 20.0 / (20.0 + db.max() - db[:-1])
        wloc = 1.0 / (1.0 + loc - db[:-1])
        return wmax * wloc

    dbc, dbd = band_db(x), band_db(d)
    wgt = 0.5 * (weights_for(dbc) + weights_for(dbd))
    sc, sd = np.diff(dbc), np.diff(dbd)
    return float(np.sum(wgt * (sc - sd) ** 2) / np.sum(wgt))


def test_wss_single_frame_matches_slope_oracle():
    rng = np.random.default_rng(13)
    x = 0.3 * rng.standard_normal(400)
    d = 0.3 * rng.standard_normal(400)
    pair = AlignedPair(AudioSignal(x, RATE), AudioSignal(d, RATE), 0, 1.0)
    assert metrics.wss(pair) == pytest.approx(_wss_single_frame_oracle(x, d), abs=1e-6)


# ---------------------------------------------------------------- csii

def test_csii_identity(sweep_identity):
    high, mid, low = metrics.csii(sweep_identity)
    for v in (high, mid, low):
        assert v == pytest.approx(1.0, abs=1e-6)


def test_csii_components_in_unit_interval(sweep):
    pair = noisy_pair(sweep, 5.0)
    for v in metrics.csii(pair):
        if v is not None:
            assert 0.0 <= v <= 1.0


def test_csii_high_above_low_under_noise(sweep):
    for seed in range(10):
        pair = noisy_pair(sweep, 0.0, seed=100 + seed)
        high, _, low = metrics.csii(pair)
        assert high is not None and low is not None
        assert high > low


def test_csii_all_regions_empty_errors():
    pair = AlignedPair(AudioSignal(np.zeros(RATE), RATE), AudioSignal(np.zeros(RATE), RATE), 0, 1.0)
    with pytest.raises(DegenerateInputError):
        metrics.csii(pair)


# ---------------------------------------------------------------- ncm

def test_ncm_identity(sweep_identity):
    assert metrics.ncm(sweep_identity) == pytest.approx(1.0, abs=1e-3)


def test_ncm_in_unit_interval(sweep):
    for snr in (10.0, -5.0):
        assert 0.0 <= metrics.ncm(noisy_pair(sweep, snr)) <= 1.0


def test_ncm_monotone_in_snr(sweep):
    vals = [metrics.ncm(noisy_pair(sweep, snr)) for snr in (20.0, 0.0, -10.0)]
    assert vals[0] > vals[1] > vals[2]


def test_ncm_too_short_errors():
    short = AudioSignal(np.ones(2000), RATE)
    with pytest.raises(PreconditionError):
        metrics.ncm(AlignedPair(short, short, 0, 1.0))


# ---------------------------------------------------------------- stoi

def test_stoi_identity(sweep_identity):
    assert metrics.stoi(sweep_identity) == pytest.approx(1.0, abs=1e-6)


def test_stoi_scale_invariance(sweep):
    base = metrics.stoi(identity_pair(sweep))
    for alpha in (0.5, 2.0):
        pair = AlignedPair(sweep, AudioSignal(alpha * sweep.samples, RATE), 0, 1.0)
        assert metrics.stoi(pair) == pytest.approx(base, abs=1e-9)


def test_stoi_monotone_in_snr(sweep):
    vals = [metrics.stoi(noisy_pair(sweep, snr)) for snr in (20.0, 10.0, 0.0, -10.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_stoi_common_scaling_invariance(sweep):
    pair = noisy_pair(sweep, 5.0)
    base = metrics.stoi(pair)
    for alpha in (0.5, 2.0):
        scaled = AlignedPair(
            AudioSignal(alpha * pair.clean.samples, RATE),
            AudioSignal(alpha * pair.degraded.samples, RATE),
            0, 1.0,
        )
        assert metrics.stoi(scaled) == pytest.approx(base, abs=1e-9)
        assert metrics.ncm(scaled) == pytest.approx(metrics.ncm(pair), abs=1e-9)
        got = metrics.csii(scaled)
        want = metrics.csii(pair)
        for g, w in zip(got, want):
            assert g == pytest.approx(w, abs=1e-9)


def test_stoi_too_short_errors():
    short = AudioSignal(np.ones(3000), RATE)
    with pytest.raises(PreconditionError):
        metrics.stoi(AlignedPair(short, short, 0, 1.0))


# ---------------------------------------------------------------- composite

def test_composite_intercepts():
    assert metrics.composite(0.0, 0.0, 0.0, 0.0) == (3.093, 1.634, 1.594)


def test_composite_linearity_in_pesq():
    c1 = metrics.composite(1.0, 10.0, 5.0, 1.0)
    c2 = metrics.composite(1.0, 10.0, 5.0, 2.0)
    assert c2[2] - c1[2] == pytest.approx(0.805, abs=1e-12)


def test_composite_matches_direct_arithmetic():
    llr_v, wss_v, snr_v, pesq_v = 1.59, 24.6, -0.7, 2.25
    csig = 3.093 - 1.029 * llr_v + 0.603 * pesq_v - 0.009 * wss_v
    got = metrics.composite(llr_v, wss_v, snr_v, pesq_v)
    assert got[0] == pytest.approx(csig, abs=1e-12)
    assert got[0] == pytest.approx(2.59224, abs=1e-9)


def test_composite_rejects_out_of_range_pesq():
    with pytest.raises(PreconditionError):
        metrics.composite(0.0, 0.0, 0.0, 5.0)


# ---------------------------------------------------------------- evaluate_pair

def test_evaluate_pair_identity(sweep_identity):
    rep = metrics.evaluate_pair(sweep_identity)
    assert rep.stoi == pytest.approx(1.0, abs=1e-6)
    assert rep.llr == pytest.approx(0.0, abs=1e-9)
    assert rep.wss == 0.0
    assert rep.snr_seg == 35.0
    assert rep.pesq is None
    assert rep.composite is None


def test_evaluate_pair_composite_gating(sweep_identity):
    rep = metrics.evaluate_pair(sweep_identity, external_pesq=4.5)
    assert rep.pesq == 4.5
    assert rep.composite is not None


def test_evaluate_pair_fields_equal_individual_ops(sweep):
    pair = noisy_pair(sweep, 10.0)
    rep = metrics.evaluate_pair(pair, external_pesq=2.0)
    assert rep.stoi == metrics.stoi(pair)
    assert rep.snr_seg == metrics.snr_seg(pair)
    assert rep.fw_snr_seg == metrics.fw_snr_seg(pair)
    assert rep.llr == metrics.llr(pair)
    assert rep.wss == metrics.wss(pair)
    assert rep.csii == metrics.csii(pair)
    assert rep.ncm == metrics.ncm(pair)
    assert rep.composite == metrics.composite(rep.llr, rep.wss, rep.snr_seg, 2.0)


def test_evaluate_pair_deterministic(sweep):
    pair = noisy_pair(sweep, 0.0)
    a = metrics.evaluate_pair(pair, external_pesq=3.0)
    b = metrics.evaluate_pair(pair, external_pesq=3.0)
    assert dataclasses.asdict(a) == dataclasses.asdict(b)


def test_evaluate_pair_selection(sweep_identity):
    rep = metrics.evaluate_pair(sweep_identity, selected=("snr_seg",))
    assert rep.snr_seg == 35.0
    assert np.isnan(rep.stoi)
    assert rep.csii == (None, None, None)


def test_evaluate_pair_unknown_metric(sweep_identity):
    with pytest.raises(ValueError):
        metrics.evaluate_pair(sweep_identity, selected=("nope",))


def test_evaluate_pair_wraps_errors_with_metric_name():
    silent = AudioSignal(np.zeros(RATE), RATE)
    with pytest.raises(MetricError, match="snr_seg"):
        metrics.evaluate_pair(AlignedPair(silent, silent, 0, 1.0), selected=("snr_seg",))
