import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent.ldp import (
    MAX_AUDIT_LENGTH,
    PrivacyParams,
    ProtocolKind,
    ProtocolProbs,
    RngStream,
    brute_force_ldp_audit,
    moue_probs,
    oue_probs,
    protocol_probs,
    randomize,
    randomize_batch,
    rappor_keep_prob,
    ub_epsilon,
    ue_probs,
    uer_probs,
    worst_case_ratio_analytic,
)

eps_st = st.floats(0.01, 10.0)
alpha_st = st.floats(1.0, 20.0)
even_s = st.integers(1, 500).map(lambda k: 2 * k)


# values below were computed with mpmath at 40 digits


def test_rappor_keep_prob_frozen():
    assert rappor_keep_prob(0.5, 92160) == pytest.approx(0.50000135633680555223, rel=1e-15)
    assert rappor_keep_prob(1.0, 2) == pytest.approx(0.62245933120185456464, rel=1e-15)


def test_uer_probs_frozen_at_mnist_sensitivity():
    p = uer_probs(PrivacyParams(0.5, 7, 92160))
    assert p.keep_one_even == pytest.approx(0.875, rel=1e-15)
    assert p.keep_one_odd == pytest.approx(0.0029069767441860465116, rel=1e-14)
    assert p.keep_zero == pytest.approx(0.87500059339614516155, rel=1e-15)


def test_moue_shares_uer_zero_probability():
    params = PrivacyParams(0.5, 7, 92160)
    m = moue_probs(params)
    assert m.keep_one == pytest.approx(1 / 8)
    assert m.keep_zero == uer_probs(params).keep_zero


def test_oue_default_is_textbook():
    p = oue_probs(1.0)
    assert p.keep_one == 0.5
    assert p.flip_zero_to_one == pytest.approx(0.26894142136999512075, rel=1e-14)


def test_ub_epsilon():
    assert ub_epsilon(7, 0.5) == pytest.approx(4.3918202981106266102, rel=1e-15)
    assert ub_epsilon(1, 0.5) == 0.5


@given(eps_st, st.integers(1, 10**6))
def test_rappor_matches_mpmath(eps, s):
    with mpmath.workdps(40):
        x = mpmath.mpf(eps) / s
        want = mpmath.e**x / (1 + mpmath.e**x)
    assert rappor_keep_prob(eps, s) == pytest.approx(float(want), rel=1e-14)


@given(eps_st, alpha_st, even_s)
@settings(max_examples=200)
def test_pair_identities(eps, alpha, s):
    params = PrivacyParams(eps, alpha, s)
    x = eps / s
    assert ue_probs(eps, s).pair_identity() == pytest.approx(math.exp(2 * x), rel=1e-10)
    assert oue_probs(eps, s).pair_identity() == pytest.approx(math.exp(x), rel=1e-10)
    assert moue_probs(params).pair_identity() == pytest.approx(math.exp(x), rel=1e-10)
    u = uer_probs(params)
    assert u.pair_identity(0) == pytest.approx(alpha**2 * math.exp(x), rel=1e-10)
    assert u.pair_identity(1) == pytest.approx(math.exp(x) / alpha**2, rel=1e-10)
    assert worst_case_ratio_analytic(u, s).paired == pytest.approx(math.exp(eps), rel=1e-10)


@given(eps_st, alpha_st, even_s)
def test_probabilities_in_open_unit_interval(eps, alpha, s):
    for kind in ProtocolKind:
        p = protocol_probs(kind, PrivacyParams(eps, alpha, s))
        for v in (p.keep_one_even, p.keep_one_odd, p.keep_zero):
            assert 0 < v < 1


def test_alpha_one_moue_is_oue():
    params = PrivacyParams(0.8, 1.0, 3)
    m, o = moue_probs(params), oue_probs(0.8, 3)
    assert m.keep_one == o.keep_one
    assert m.keep_zero == pytest.approx(o.keep_zero)


def test_uer_rejects_odd_sensitivity():
    with pytest.raises(ValueError, match="even"):
        uer_probs(PrivacyParams(0.5, 7, 5))


@pytest.mark.parametrize("bad", [dict(epsilon=0), dict(epsilon=-1), dict(epsilon=math.inf), dict(epsilon=math.nan),
                                 dict(epsilon=1, alpha=0.5), dict(epsilon=1, sensitivity=0), dict(epsilon=1, sensitivity=1.5)])
def test_privacy_params_validation(bad):
    with pytest.raises(ValueError):
        PrivacyParams(**bad)


def test_probs_validation():
    with pytest.raises(ValueError):
        ProtocolProbs(0.0, 0.0, 0.5, ProtocolKind.UE)
    with pytest.raises(ValueError, match="parity"):
        ProtocolProbs(0.5, 0.4, 0.5, ProtocolKind.MOUE)
    ident = ProtocolProbs.identity()
    assert randomize([1, 0, 1, 1], ident, RngStream(0)).tolist() == [1, 0, 1, 1]


def test_protocol_kind_codes_and_case():
    for kind in ProtocolKind:
        assert ProtocolKind.from_code(kind.code) is kind
    assert ProtocolKind("uer") is ProtocolKind.UER
    with pytest.raises(ValueError):
        ProtocolKind.from_code(9)


def test_rng_stream_replay_and_independence():
    a = RngStream(5).uniform(10)
    assert np.array_equal(a, RngStream(5).uniform(10))
    assert not np.array_equal(a, RngStream(5, 1).uniform(10))
    assert not np.array_equal(RngStream(5).child(0).uniform(10), RngStream(5).child(1).uniform(10))
    with pytest.raises(ValueError):
        RngStream(-1)


def test_randomize_output_contract():
    out = randomize(np.array([1, 0] * 50), uer_probs(PrivacyParams(0.5, 7, 100)), RngStream(1))
    assert out.dtype == np.uint8 and out.shape == (100,)
    assert set(np.unique(out)) <= {0, 1}
    assert not out.flags.writeable
    with pytest.raises(ValueError):
        randomize([0, 2], ue_probs(1.0), RngStream(0))
    with pytest.raises(ValueError):
        randomize([], ue_probs(1.0), RngStream(0))


def test_randomize_batch_matches_rowwise():
    probs = moue_probs(PrivacyParams(1.0, 3, 20))
    bits = np.random.default_rng(0).integers(0, 2, (5, 20))
    rng = RngStream(9)
    batch = randomize_batch(bits, probs, rng)
    for i in range(5):
        assert np.array_equal(batch[i], randomize(bits[i], probs, rng.child(i)))


def test_randomize_frequencies_small():
    # 2e5 trials per class; 5 sigma bands
    probs = uer_probs(PrivacyParams(0.5, 7, 100))
    bits = np.tile([1, 1, 0, 0], 100_000)
    out = randomize(bits, probs, RngStream(3))
    for offset, want in ((0, probs.keep_one_even), (1, probs.keep_one_odd), (2, 1 - probs.keep_zero)):
        got = out[offset::4].mean()
        sigma = math.sqrt(want * (1 - want) / 100_000)
        assert abs(got - want) < 5 * sigma


def test_audit_ue_equals_e():
    probs = ue_probs(1.0, 2)
    assert brute_force_ldp_audit(probs, 2) == pytest.approx(math.e, rel=1e-12)
    assert brute_force_ldp_audit(probs, 2, exact=True) == pytest.approx(math.e, rel=1e-14)


def test_audit_moue_frozen():
    probs = moue_probs(PrivacyParams(0.5, 7, 4))
    ratio = brute_force_ldp_audit(probs, 4)
    assert ratio == pytest.approx(1.5539696340330192985, rel=1e-12)
    assert ratio <= math.exp(0.5)


def test_audit_uer_unconstrained_gap():
    probs = uer_probs(PrivacyParams(0.5, 7, 4))
    ratio = brute_force_ldp_audit(probs, 4)
    assert ratio == pytest.approx(90601.0, rel=1e-12)
    bounds = worst_case_ratio_analytic(probs, 4, length=4)
    assert bounds.unconstrained == pytest.approx(ratio, rel=1e-12)
    assert bounds.paired == pytest.approx(math.exp(0.5), rel=1e-12)


@given(eps_st, alpha_st, st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_analytic_matches_brute_force(eps, alpha, length):
    for kind in (ProtocolKind.UE, ProtocolKind.OUE, ProtocolKind.MOUE):
        probs = protocol_probs(kind, PrivacyParams(eps, alpha, length))
        brute = brute_force_ldp_audit(probs, length)
        assert worst_case_ratio_analytic(probs, length, length).unconstrained == pytest.approx(brute, rel=1e-9)


def test_exact_audit_agrees_with_float():
    probs = uer_probs(PrivacyParams(2.0, 3, 4))
    assert brute_force_ldp_audit(probs, 4, exact=True) == pytest.approx(brute_force_ldp_audit(probs, 4), rel=1e-10)


def test_audit_length_limits():
    with pytest.raises(ValueError, match="refusing"):
        brute_force_ldp_audit(ue_probs(1.0), MAX_AUDIT_LENGTH + 1)
    with pytest.raises(ValueError):
        brute_force_ldp_audit(ue_probs(1.0), 7, exact=True)
    with pytest.raises(ValueError):
        brute_force_ldp_audit(ue_probs(1.0), 0)


def test_audit_pass_through_is_infinite():
    # a deterministic randomizer leaks everything
    assert brute_force_ldp_audit(ProtocolProbs.identity(), 2) == math.inf


def test_analytic_odd_sensitivity_warns():
    probs = ProtocolProbs(0.8, 0.1, 0.8, ProtocolKind.UER)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        bounds = worst_case_ratio_analytic(probs, 3)
    assert bounds.paired is None
    assert caught
