"""Autodiff substrate tests: forward oracles, finite-difference gradient
checks, straight-through behavior of the quantized GEMM, and tape mechanics."""

import numpy as np
import pytest

from fp4lab.errors import NumericsError
from fp4lab.fpquant import QuantConfig, fake_quant_along
from fp4lab.tensorcore import (
    GemmTap,
    Tape,
    Tensor,
    absval,
    add,
    bmm,
    causal_softmax,
    concat,
    cross_entropy,
    embedding,
    gelu,
    grad_check,
    matmul,
    mul,
    narrow,
    quant_matmul,
    reshape,
    rmsnorm,
    row_normalize,
    silu,
    softmax,
    sub,
    transpose,
    tsum,
)

BARE = QuantConfig(rht_enabled=False, per_tensor_scale=False)


def scalarizer(rng, shape):
    """A fixed random contraction making any op's output a scalar loss."""
    c = Tensor(rng.standard_normal(shape))
    return lambda t: tsum(mul(t, c))


# ---------------------------------------------------------------- forward oracles


def test_matmul_identity_and_zero():
    rng = np.random.default_rng(0)
    b = Tensor(rng.standard_normal((5, 7)))
    assert np.array_equal(matmul(Tensor(np.eye(5)), b).data, b.data)
    z = matmul(Tensor(np.zeros((3, 5))), b)
    assert not z.data.any()


def test_softmax_of_constants_is_uniform():
    out = softmax(Tensor(np.full((2, 5), 3.25)))
    assert np.allclose(out.data, 0.2, atol=1e-15)


def test_causal_softmax_masks_future_positions():
    rng = np.random.default_rng(1)
    scores = Tensor(rng.standard_normal((2, 3, 4, 4)))
    y = causal_softmax(scores).data
    assert y[..., 0, 1:].max() == 0.0
    assert np.allclose(y.sum(axis=-1), 1.0)
    assert np.allclose(y[..., 0, 0], 1.0)


def test_cross_entropy_of_uniform_logits_is_log_vocab():
    loss = cross_entropy(Tensor(np.zeros((3, 8))), np.array([1, 5, 7]))
    assert abs(loss.item() - np.log(8.0)) < 1e-12


def test_row_normalize_three_four():
    out = row_normalize(Tensor(np.array([[3.0, 4.0]])))
    assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)
    unit = np.array([[0.0, 1.0, 0.0]])
    assert np.array_equal(row_normalize(Tensor(unit)).data, unit)


def test_row_normalize_output_norms_are_unit():
    rng = np.random.default_rng(2)
    y = row_normalize(Tensor(rng.standard_normal((40, 16)) * 5.0)).data
    assert np.abs(np.linalg.norm(y, axis=-1) - 1.0).max() < 1e-12


def test_rmsnorm_matches_reference():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 8))
    got = rmsnorm(Tensor(x)).data
    want = x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-12)
    assert np.allclose(got, want, atol=1e-15)


def test_embedding_gathers_rows():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    ids = np.array([[0, 3], [3, 1]])
    out = embedding(table, ids)
    assert out.shape == (2, 2, 3)
    assert np.array_equal(out.data[0, 1], [9.0, 10.0, 11.0])


def test_narrow_slices_and_scatters_gradient():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    with Tape() as tape:
        mid = narrow(x, 1, 1, 2)
        loss = tsum(mid)
    assert np.array_equal(mid.data, x.data[:, 1:3])
    tape.backward(loss)
    want = np.zeros((3, 4))
    want[:, 1:3] = 1.0
    assert np.array_equal(x.grad, want)
    with pytest.raises(ValueError, match="narrow"):
        narrow(x, 1, 3, 2)
    with pytest.raises(ValueError, match="narrow"):
        narrow(x, 5, 0, 1)


def test_concat_joins_and_routes_gradient_slices():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    y = Tensor(np.full((2, 1), 2.0), requires_grad=True)
    with Tape() as tape:
        out = concat([x, y], axis=1)
        loss = tsum(mul(out, Tensor(np.arange(8.0).reshape(2, 4))))
    assert np.array_equal(out.data, np.concatenate([x.data, y.data], axis=1))
    tape.backward(loss)
    assert np.array_equal(x.grad, [[0.0, 1.0, 2.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(y.grad, [[3.0], [7.0]])
    with pytest.raises(ValueError, match="concat"):
        concat([x, Tensor(np.ones((3, 3)))], axis=1)


def test_absval_forward_and_sign_gradient():
    x = Tensor(np.array([-2.0, 3.0, -0.5]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(absval(x), Tensor(np.array([1.0, 2.0, 3.0]))))
    tape.backward(loss)
    assert np.array_equal(x.grad, [-1.0, 2.0, -3.0])


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("seed", range(10))
def test_every_primitive_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)

    def p(shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    a, b = p((4, 6)), p((4, 6))
    vec = p((6,))
    m1, m2 = p((4, 5)), p((5, 3))
    bm1, bm2 = p((2, 3, 4, 5)), p((2, 3, 5, 4))
    sc = p((2, 2, 5, 5))
    table = p((7, 4))
    ids = rng.integers(0, 7, size=(3, 5))
    logits = p((6, 9))
    targets = rng.integers(0, 9, size=6)
    offgrid = Tensor(
        rng.uniform(0.5, 2.0, (4, 6)) * rng.choice([-1.0, 1.0], (4, 6)),
        requires_grad=True,
    )

    s46 = scalarizer(rng, (4, 6))
    s45 = scalarizer(rng, (4, 5))
    s43 = scalarizer(rng, (4, 3))
    s44b = scalarizer(rng, (2, 3, 4, 4))
    s55 = scalarizer(rng, (2, 2, 5, 5))
    s5401 = scalarizer(rng, (4, 2, 5, 3))
    s210 = scalarizer(rng, (2, 10))
    s354 = scalarizer(rng, (3, 5, 4))
    s48 = scalarizer(rng, (4, 8))

    cases = [
        (lambda: s46(add(a, b)), [a, b]),
        (lambda: s46(add(a, vec)), [a, vec]),
        (lambda: s46(mul(a, b)), [a, b]),
        (lambda: s46(sub(a, vec)), [a, vec]),
        (lambda: s46(silu(a)), [a]),
        (lambda: s46(gelu(a)), [a]),
        (lambda: s46(softmax(a)), [a]),
        (lambda: s55(causal_softmax(sc)), [sc]),
        (lambda: s46(rmsnorm(a)), [a]),
        (lambda: s46(row_normalize(a)), [a]),
        (lambda: s43(matmul(m1, m2)), [m1, m2]),
        (lambda: s44b(bmm(bm1, bm2)), [bm1, bm2]),
        (lambda: s5401(transpose(bm1, (2, 0, 3, 1))), [bm1]),
        (lambda: s210(reshape(m1, (2, 10))), [m1]),
        (lambda: s43(narrow(a, 1, 2, 3)), [a]),
        (lambda: s46(absval(offgrid)), [offgrid]),
        (lambda: s48(concat([a, narrow(b, 1, 0, 2)], axis=1)), [a, b]),
        (lambda: s354(embedding(table, ids)), [table]),
        (lambda: cross_entropy(logits, targets), [logits]),
    ]
    for f, params in cases:
        err = grad_check(f, params, seed=seed)
        assert err < 1e-4, f"gradient mismatch {err}"


def test_quantized_gemm_gradient_under_straight_through():
    rng = np.random.default_rng(20)
    a = Tensor(rng.standard_normal((4, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((16, 3)), requires_grad=True)
    c = rng.standard_normal((4, 3))
    cfg = QuantConfig(rht_enabled=False, quantize_grads=False)
    with Tape() as tape:
        loss = tsum(mul(quant_matmul(a, w, cfg), Tensor(c)))
    tape.backward(loss)
    b_hat = fake_quant_along(w.data, cfg, axis=0)
    a_hat = fake_quant_along(a.data, cfg, axis=-1)
    assert np.array_equal(a.grad, c @ b_hat.T)
    assert np.array_equal(w.grad, a_hat.T @ c)


def test_row_normalize_jacobian_is_the_projection():
    rng = np.random.default_rng(21)
    v = rng.standard_normal(6)
    n = np.linalg.norm(v)
    unit = v / n
    want = (np.eye(6) - np.outer(unit, unit)) / n
    got = np.zeros((6, 6))
    for i in range(6):
        x = Tensor(v.copy(), requires_grad=True)
        with Tape() as tape:
            out = row_normalize(x)
            probe = tsum(mul(out, Tensor(np.eye(6)[i])))
        tape.backward(probe)
        got[i] = x.grad
    assert np.allclose(got, want, atol=1e-12)


def test_gradients_accumulate_across_shared_inputs():
    x = Tensor(np.asarray(3.0), requires_grad=True)
    with Tape() as tape:
        y = add(mul(x, x), x)
    tape.backward(y)
    assert x.grad == 7.0


def test_broadcast_gradient_reduces_to_operand_shape():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    v = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        out = tsum(add(a, v))
    tape.backward(out)
    assert a.grad.shape == (3, 4)
    assert np.array_equal(v.grad, np.full(4, 3.0))


def test_embedding_gradient_accumulates_repeated_ids():
    table = Tensor(np.zeros((3, 2)), requires_grad=True)
    ids = np.array([1, 1, 2])
    g = np.array([[1.0, 2.0], [10.0, 20.0], [5.0, 5.0]])
    with Tape() as tape:
        out = tsum(mul(embedding(table, ids), Tensor(g)))
    tape.backward(out)
    assert np.array_equal(table.grad, [[0.0, 0.0], [11.0, 22.0], [5.0, 5.0]])


# ---------------------------------------------------------------- quantized GEMM


def test_quant_matmul_without_config_is_matmul_bitwise():
    rng = np.random.default_rng(30)
    a = Tensor(rng.standard_normal((8, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((16, 5)), requires_grad=True)
    c = Tensor(rng.standard_normal((8, 5)))
    with Tape() as t1:
        l1 = tsum(mul(quant_matmul(a, w, None), c))
    t1.backward(l1)
    ga, gw = a.grad.copy(), w.grad.copy()
    a.grad = w.grad = None
    with Tape() as t2:
        l2 = tsum(mul(matmul(a, w), c))
    t2.backward(l2)
    assert np.array_equal(l1.data, l2.data)
    assert np.array_equal(ga, a.grad)
    assert np.array_equal(gw, w.grad)


def test_quant_matmul_forward_composes_fake_quant_and_matmul():
    rng = np.random.default_rng(31)
    a = Tensor(rng.standard_normal((64, 64)))
    b = Tensor(rng.standard_normal((64, 64)))
    for cfg in (BARE, QuantConfig(seed=5), QuantConfig(scale_format="float", rht_enabled=False)):
        got = quant_matmul(a, b, cfg).data
        want = fake_quant_along(a.data, cfg, -1) @ fake_quant_along(b.data, cfg, 0)
        assert np.array_equal(got, want)


def test_quant_matmul_forward_rounds_to_nearest_even_under_sr_config():
    rng = np.random.default_rng(32)
    a = Tensor(rng.standard_normal((8, 32)))
    b = Tensor(rng.standard_normal((32, 8)))
    sr_cfg = QuantConfig(rounding="stochastic", rht_enabled=False, seed=3)
    got = quant_matmul(a, b, sr_cfg).data
    want = quant_matmul(a, b, QuantConfig(rht_enabled=False, seed=3)).data
    assert np.array_equal(got, want)


def on_grid(rng, shape):
    levels = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0])
    vals = rng.choice(levels, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    vals[0, :] = 6.0
    vals[:, 0] = 6.0
    return vals


def test_exactly_representable_operands_make_quantization_lossless():
    # Every operand value sits on the codebook at block scale 1 (each row and
    # column holds a 6), so both the forward and the freshly quantized
    # backward GEMMs must equal the unquantized ones bit for bit.
    rng = np.random.default_rng(33)
    a = Tensor(on_grid(rng, (16, 16)), requires_grad=True)
    w = Tensor(on_grid(rng, (16, 16)), requires_grad=True)
    c = on_grid(rng, (16, 16))
    for cfg in (BARE, QuantConfig(rht_enabled=False, per_tensor_scale=False, quantize_grads=False)):
        a.grad = w.grad = None
        with Tape() as tape:
            loss = tsum(mul(quant_matmul(a, w, cfg), Tensor(c)))
        tape.backward(loss)
        assert np.array_equal(loss.data, (a.data @ w.data * c).sum())
        assert np.array_equal(a.grad, c @ w.data.T)
        assert np.array_equal(w.grad, a.data.T @ c)


def test_backward_quantization_streams_are_separate_and_reproducible():
    rng = np.random.default_rng(34)
    a = Tensor(rng.standard_normal((8, 32)), requires_grad=True)
    w = Tensor(rng.standard_normal((32, 8)), requires_grad=True)
    c = Tensor(rng.standard_normal((8, 8)))

    def grads(nonce):
        a.grad = w.grad = None
        cfg = QuantConfig(rounding="stochastic", rht_enabled=False, sr_nonce=nonce)
        with Tape() as tape:
            loss = tsum(mul(quant_matmul(a, w, cfg), c))
        tape.backward(loss)
        return a.grad.copy(), w.grad.copy()

    ga1, gw1 = grads(7)
    ga2, gw2 = grads(7)
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(gw1, gw2)
    ga3, gw3 = grads(8)
    assert not np.array_equal(ga1, ga3)
    assert not np.array_equal(gw1, gw3)


def test_analysis_tap_records_eager_operand_copies():
    rng = np.random.default_rng(35)
    a = Tensor(rng.standard_normal((4, 16)))
    w = Tensor(rng.standard_normal((16, 4)))
    tap = []
    quant_matmul(a, w, BARE, tap=tap, name="blk0.qkv")
    assert len(tap) == 1
    rec = tap[0]
    assert isinstance(rec, GemmTap)
    assert rec.name == "blk0.qkv"
    assert np.array_equal(rec.a_hat, fake_quant_along(a.data, BARE, -1))
    assert np.array_equal(rec.b_hat, fake_quant_along(w.data, BARE, 0))
    before = rec.a.copy()
    a.data[:] = 0.0
    assert np.array_equal(rec.a, before)


# ---------------------------------------------------------------- validation


def test_shape_mismatches_name_both_shapes():
    a, b = Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 3)))
    with pytest.raises(ValueError, match=r"\(4, 3\).*\(4, 3\)"):
        matmul(a, b)
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))
    with pytest.raises(ValueError, match=r"\(2, 3, 4\).*\(3, 4, 2\)"):
        bmm(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 4, 2))))
    with pytest.raises(ValueError, match="scores"):
        causal_softmax(Tensor(np.zeros((4, 5))))


def test_non_finite_results_raise_instead_of_propagating():
    big = Tensor(np.full((2, 2), 1e308))
    with np.errstate(over="ignore"):
        with pytest.raises(NumericsError):
            add(big, big)
        with pytest.raises(NumericsError):
            matmul(big, big)
        with pytest.raises(NumericsError):
            mul(big, big)


def test_zero_norm_slice_is_rejected():
    x = Tensor(np.array([[1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(NumericsError, match="row_normalize"):
        row_normalize(x)


def test_embedding_rejects_bad_ids():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(ValueError, match="out of range"):
        embedding(table, np.array([0, 4]))
    with pytest.raises(ValueError, match="integers"):
        embedding(table, np.array([0.5]))


def test_cross_entropy_rejects_bad_shapes_and_targets():
    with pytest.raises(ValueError, match="cross_entropy"):
        cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1]))
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 4]))


# ---------------------------------------------------------------- tape mechanics


def test_tape_records_only_while_active_and_runs_once():
    x = Tensor(np.asarray(2.0), requires_grad=True)
    outside = mul(x, x)
    assert outside.tape_id is None
    with Tape() as tape:
        inside = mul(x, x)
    assert inside.tape_id == 0
    assert len(tape.records) == 1
    tape.backward(inside)
    assert x.grad == 4.0
    tape.backward(inside)  # a second sweep re-accumulates, proving one visit per sweep
    assert x.grad == 8.0


def test_tape_cannot_be_entered_twice_concurrently():
    tape = Tape()
    with tape:
        with pytest.raises(RuntimeError):
            tape.__enter__()


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_constants_receive_no_gradients():
    x = Tensor(np.ones(4), requires_grad=True)
    c = Tensor(np.ones(4))
    with Tape() as tape:
        out = tsum(mul(x, c))
    tape.backward(out)
    assert c.grad is None
    assert np.array_equal(x.grad, np.ones(4))


def test_grad_check_rejects_non_scalar_and_non_finite():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        grad_check(lambda: mul(x, x), [x])
    y = Tensor(np.asarray(1e308), requires_grad=True)
    with np.errstate(over="ignore"):
        with pytest.raises(NumericsError):
            grad_check(lambda: mul(mul(y, y), y), [y])
