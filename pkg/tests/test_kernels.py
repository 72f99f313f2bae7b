import numpy as np
import pytest

from corefread import kernels


def _inputs(seed=0, B=3, T=6, H=4, with_padding=True):
    rng = np.random.default_rng(seed)
    xp = rng.normal(size=(B, T, 3 * H))
    u = rng.normal(size=(H, 3 * H)) * 0.3
    b = rng.normal(size=H) * 0.1
    h0 = np.zeros((B, H))
    mask = np.ones((B, T))
    if with_padding:
        mask[1, 4:] = 0.0
        mask[2, 2:] = 0.0
    g = rng.normal(size=(B, T, H))
    return xp, u, b, h0, mask, g


class TestBackendParity:
    @pytest.mark.parametrize("reverse", [False, True])
    def test_forward_and_backward_agree(self, reverse):
        impls = kernels.implementations()
        if "numba" not in impls:
            pytest.skip("numba unavailable")
        xp, u, b, h0, mask, g = _inputs()
        outs = {}
        for name, fns in impls.items():
            fwd = fns["gru_seq_forward"](xp, u, b, h0, mask, reverse)
            bwd = fns["gru_seq_backward"](
                g, xp, u, mask, fwd[0], h0, fwd[1], fwd[2], fwd[3], fwd[4], reverse
            )
            outs[name] = (fwd, bwd)
        for a, b_ in zip(outs["numba"][0], outs["numpy"][0]):
            np.testing.assert_allclose(a, b_, atol=1e-12)
        for a, b_ in zip(outs["numba"][1], outs["numpy"][1]):
            np.testing.assert_allclose(a, b_, atol=1e-12)


class TestMaskSemantics:
    def test_masked_steps_carry_state_through(self):
        xp, u, b, h0, mask, _ = _inputs(with_padding=True)
        out = kernels.gru_seq_forward(xp, u, b, h0, mask, False)[0]
        # instance 2 is padded from t=2: the state freezes there
        np.testing.assert_array_equal(out[2, 2], out[2, 1])
        np.testing.assert_array_equal(out[2, 5], out[2, 1])

    def test_reverse_with_padding_starts_from_zero(self):
        xp, u, b, h0, mask, _ = _inputs(with_padding=True)
        out = kernels.gru_seq_forward(xp, u, b, h0, mask, True)[0]
        # iterating from the padded tail, state stays zero until real tokens
        np.testing.assert_array_equal(out[2, 5], np.zeros(4))
        assert np.any(out[2, 1] != 0.0)


class TestBackendEnv:
    def test_backend_resolved(self):
        assert kernels.BACKEND in ("numba", "numpy")

    def test_implementations_always_include_numpy(self):
        impls = kernels.implementations()
        assert "numpy" in impls
