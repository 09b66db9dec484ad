"""Model kernels, tilts, cut-offs and condition reports."""
import math

import numpy as np
import pytest

from knary import (
    COAG, FRAG, TestFunction, TiltFunction, bd_kernel, check_conditions, cutoff, kac_kernel, kernel_norm_tensor,
    smoluchowski_kernel, table_kernel, tilt_eta, tilt_f, zero_kernel,
)
from knary.kernels import Jumps, energy_balance


def bd_const(a=1.0, b=1.0, n=60):
    return bd_kernel(a, b, n)


# --- Becker-Doring ------------------------------------------------------------

def test_bd_examples():
    k = bd_kernel(lambda i: np.where(np.asarray(i) == 3, 2.0, 1.0), 1.0, 20)
    assert k.total_rate(0, (3, 1)) == 2.0
    assert k.product_law(0, (1, 3)) == [((4,), 2.0)]
    assert k.total_rate(0, (1,)) == 0.0
    assert k.total_rate(0, (2, 3)) == 0.0


def test_bd_monomer_pair_convention():
    # the pair {1,1} carries 2 a_1 so that dimers form at a_1 x_1 (x_1 - 1) / N
    k = bd_const(a=1.5)
    assert k.total_rate(0, (1, 1)) == 3.0


def test_bd_rejects_bad_rates():
    with pytest.raises(ValueError):
        bd_kernel(-1.0, 1.0, 10)
    with pytest.raises(ValueError):
        bd_kernel(1.0, [1.0, 1.0, 1.0], 3)  # b_1 != 0


def test_bd_fragmentation_products():
    k = bd_const()
    assert k.product_law(0, (5,)) == [((1, 4), 1.0)]
    assert k.product_law(0, (2,)) == [((1, 1), 1.0)]


# --- Smoluchowski and Kac -----------------------------------------------------

def test_smoluchowski_examples():
    one = smoluchowski_kernel(lambda x, y: np.ones(np.broadcast(x, y).shape))
    assert one.total_rate(0, (1, 2)) == 1.0
    assert one.product_law(0, (1, 2)) == [((3,), 1.0)]
    prod = smoluchowski_kernel(lambda x, y: np.asarray(x, float) * y)
    assert prod.total_rate(0, (2, 3)) == 6.0
    assert prod.product_law(0, (2, 3)) == [((5,), 6.0)]
    assert one.total_rate(0, (4,)) == 0.0


def test_smoluchowski_rejects_asymmetric():
    with pytest.raises(ValueError):
        smoluchowski_kernel(lambda x, y: np.asarray(x, float) + 2.0 * np.asarray(y, float) ** 2)


def test_kac_examples():
    k = kac_kernel(1.0)
    a, b = k.rotate(1.0, 0.0, math.pi / 2)
    assert a == pytest.approx(0.0, abs=1e-15) and b == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = k.sample_products(0, (3.0, 4.0), rng)
        assert y[0] ** 2 + y[1] ** 2 == pytest.approx(25.0, abs=1e-12)
    assert k.total_rate(0, (0.3, -2.0)) == 1.0
    assert kac_kernel(2.5).total_rate(0, (1.0, 1.0)) == 2.5
    with pytest.raises(ValueError):
        kac_kernel(0.0)


# --- tilts ----------------------------------------------------------------------

def test_tilt_identity_and_constant():
    k = bd_const()
    st = k.structure(30)
    one = tilt_eta(k, TiltFunction.constant(1.0))
    assert np.array_equal(one.rates(0.0, st), k.rates(0.0, st))
    three = tilt_eta(k, TiltFunction.constant(3.0))
    assert np.array_equal(three.rates(0.0, st), 3.0 * k.rates(0.0, st))
    z = tilt_f(k, TestFunction.zero())
    assert np.allclose(z.rates(0.0, st), k.rates(0.0, st), rtol=0, atol=0)


def test_tilt_by_kind_channel_rates():
    k = bd_kernel(lambda i: 1.0 + 0.1 * np.asarray(i), 0.7, 30)
    tk = tilt_eta(k, TiltFunction.by_kind({COAG: 2.0, FRAG: 0.5}))
    for i in range(2, 10):
        assert tk.total_rate(0, (1, i)) == pytest.approx(2.0 * (1 + 0.1 * i))
        assert tk.total_rate(0, (i,)) == pytest.approx(0.5 * 0.7)


def test_bd_f_tilt_rates_and_identity():
    rng = np.random.default_rng(3)
    k = bd_kernel(lambda i: 1.0 + np.sqrt(np.asarray(i, float)), lambda i: np.where(np.asarray(i) >= 2, 2.0, 0.0), 40)
    for _ in range(5):
        tab = np.concatenate([[0.0], rng.uniform(-1, 1, 45)])
        f = TestFunction.from_table(tab)
        tk = tilt_f(k, f)
        for i in range(1, 30):
            sym = 2.0 if i == 1 else 1.0
            a_t = tk.total_rate(0, (1, i)) / sym
            a = (1.0 + math.sqrt(i))
            assert a_t == pytest.approx(math.exp(tab[i + 1] - tab[i] - tab[1]) * a, rel=1e-12)
            b_t = tk.total_rate(0, (i + 1,))
            assert a_t * b_t == pytest.approx(a * 2.0, rel=1e-12)


def test_double_f_tilt_cancels():
    k = bd_const()
    tab = np.concatenate([[0.0], np.random.default_rng(4).uniform(-1, 1, 70)])
    f = TestFunction.from_table(tab)
    back = tilt_f(tilt_f(k, f), -f)
    for z in [(1, 1), (1, 5), (7,), (2,)]:
        assert back.total_rate(0, z) == pytest.approx(k.total_rate(0, z), rel=1e-12)


def test_tilt_rejects_negative_density():
    k = bd_const()
    bad = tilt_eta(k, TiltFunction(lambda t, J: -np.ones(len(J)), 1.0, False))
    with pytest.raises(ValueError):
        bad.rates(0.0, k.structure(5))


def test_cutoff_examples():
    k = bd_const()
    c = cutoff(k, 2.0)
    assert c.total_rate(0, (1, 1)) == 2.0
    for i in range(2, 10):
        assert c.total_rate(0, (1, i)) == 0.0
    assert c.total_rate(0, (2,)) == 1.0
    assert c.total_rate(0, (3,)) == 0.0
    c3 = cutoff(k, 2.0, TiltFunction.constant(3.0))
    assert c3.total_rate(0, (1, 1)) == 4.0
    assert cutoff(k, math.inf) is k


# --- energy and product count ----------------------------------------------------

@pytest.mark.parametrize("kern", [bd_const(n=200), smoluchowski_kernel(lambda x, y: np.asarray(x, float) + y)])
def test_count_kernel_energy_balance(kern):
    st = kern.structure(100)
    rng = np.random.default_rng(0)
    J = st.jumps.take(rng.integers(0, len(st.jumps), 10_000))
    bal = energy_balance(kern, J)
    assert np.max(np.abs(bal)) <= 1e-12
    d = kern.signature.d
    assert np.all(J.n_products <= np.array([d[int(l)] for l in J.n_reactants]))


def test_kac_energy_balance_sampled():
    k = kac_kernel(1.0)
    rng = np.random.default_rng(1)
    v, w = rng.normal(0, 3, 10_000), rng.normal(0, 3, 10_000)
    y = np.array([k.collide(0, a, b, rng) for a, b in zip(v, w)])
    J = Jumps(np.stack([v, w], 1), y, np.full(v.size, 2), np.full(v.size, 2), np.zeros(v.size, np.int64))
    assert np.max(np.abs(energy_balance(k, J))) <= 1e-12 * (1 + np.max(v * v + w * w))


def test_signature_validation():
    from knary import KernelSignature
    with pytest.raises(ValueError):
        KernelSignature(k=2, e_conserving=True, one_nonincreasing=False)  # no dust floor
    sig = KernelSignature(k=3, e_conserving=False, one_nonincreasing=False, dust_floor=0.5)
    assert sig.d[1] == 3 and sig.d[2] == 2 and sig.d[3] == 3
    assert sig.c0 == 3.0


def test_table_kernel_generic():
    k = table_kernel([((1, 1), (2,), 0.5), ((2,), (1, 1), 0.25)])
    assert k.total_rate(0, (1, 1)) == 0.5
    assert k.total_rate(0, (2,)) == 0.25
    assert zero_kernel().total_rate(0, (1, 1)) == 0.0


# --- norms and conditions ------------------------------------------------------

def test_kernel_norm_bd_closed_form():
    # the {1,1} channel carries 2 a_1, so its ratio 2/(2*2) = 1/2 beats b_2/3
    assert kernel_norm_tensor(bd_const(n=500)) == pytest.approx(0.5)
    # without the monomer pair the detachment ratio b_2/(1+2) is the sup
    k = bd_kernel(lambda i: np.where(np.asarray(i) == 1, 0.1, 1.0), 1.0, 500)
    assert kernel_norm_tensor(k) == pytest.approx(1 / 3)
    grow = bd_kernel(lambda i: np.asarray(i, float) ** 1.5, 1.0, 500)
    assert kernel_norm_tensor(grow) == math.inf


def test_kernel_norm_other_models():
    assert kernel_norm_tensor(kac_kernel(1.0)) == 1.0
    probe = [(v, w) for v in np.linspace(0, 3, 13) for w in np.linspace(0, 3, 13)]
    assert kernel_norm_tensor(kac_kernel(1.0), probe) == pytest.approx(1.0)
    zero = smoluchowski_kernel(lambda x, y: np.zeros(np.broadcast(x, y).shape))
    assert kernel_norm_tensor(zero, [(1, 2), (3, 3)]) == 0.0


def test_check_conditions_reports():
    sq = bd_kernel(lambda i: np.sqrt(np.asarray(i, float)), lambda i: np.where(np.asarray(i) >= 2,
                                                                              np.sqrt(np.asarray(i, float)), 0.0), 400)
    rep = check_conditions(sq)
    assert rep.tensor_decay is True
    kac = check_conditions(kac_kernel(2.0), beta=1.0)
    assert kac.plus_norm == pytest.approx(1.0)  # lambda / <1+E, delta_(0,0)> = 2 / 2
    assert kac.lambda0 == pytest.approx(0.0, abs=1e-9)  # E-moments conserved at beta = 1
    z = check_conditions(zero_kernel(), probe=[(1, 1), (2,)])
    assert z.plus_norm == 0.0 and z.lambda0 == 0.0
