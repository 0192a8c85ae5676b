"""Backend selection and numba/numpy kernel agreement."""

import os
import subprocess
import sys

import numpy as np

from d2g import accel


def _random_net(rng, dims):
    p = sum((dims[l] + 1) * dims[l + 1] for l in range(len(dims) - 1))
    return np.asarray(rng.normal(size=p)), np.array(dims, dtype=np.int64)


class TestBackendAgreement:
    """Both implementations must agree to rounding on identical inputs."""

    def test_forward(self):
        rng = np.random.default_rng(0)
        for dims in ([3, 5, 2], [1, 32, 1], [4, 2]):
            params, dims_arr = _random_net(rng, dims)
            x = rng.normal(size=(9, dims[0]))
            for act in (accel.ACT_TANH, accel.ACT_SIGMOID):
                a = accel._forward_np(params, dims_arr, act, x)
                b = accel._forward_nb_py(params, dims_arr, act, x)
                np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)

    def test_jacobian(self):
        rng = np.random.default_rng(1)
        for dims in ([2, 4, 3, 2], [3, 6, 1], [2, 3]):
            params, dims_arr = _random_net(rng, dims)
            x = rng.normal(size=(5, dims[0]))
            fa, ja = accel._forward_jac_np(params, dims_arr, 0, x)
            fb, jb = accel._forward_jac_nb_py(params, dims_arr, 0, x)
            np.testing.assert_allclose(fa, fb, rtol=1e-13, atol=1e-13)
            np.testing.assert_allclose(ja, jb, rtol=1e-12, atol=1e-13)

    def test_vjp(self):
        rng = np.random.default_rng(2)
        params, dims_arr = _random_net(rng, [3, 7, 2])
        x = rng.normal(size=(11, 3))
        cot = rng.normal(size=(11, 2))
        a = accel._vjp_np(params, dims_arr, 1, x, cot)
        b = accel._vjp_nb_py(params, dims_arr, 1, x, cot)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)

    def test_vjp_consistent_with_jacobian(self):
        """The fused gradient equals the contraction of the explicit
        per-example Jacobians with the cotangent."""
        rng = np.random.default_rng(3)
        params, dims_arr = _random_net(rng, [2, 5, 3])
        x = rng.normal(size=(6, 2))
        cot = rng.normal(size=(6, 3))
        g = accel.batch_vjp(params, dims_arr, 0, x, cot)
        _, jacs = accel.batch_forward_jacobian(params, dims_arr, 0, x)
        np.testing.assert_allclose(g, np.einsum("nkp,nk->p", jacs, cot),
                                   rtol=1e-12, atol=1e-13)


class TestEnvFlag:
    def test_disable_flag_selects_numpy(self):
        """D2G_DISABLE_NUMBA=1 must switch the dispatcher to the numpy path
        in a fresh interpreter."""
        env = dict(os.environ, D2G_DISABLE_NUMBA="1")
        out = subprocess.run(
            [sys.executable, "-c",
             "from d2g import accel; print(accel.backend_name())"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "numpy"

    def test_default_reports_some_backend(self):
        assert accel.backend_name() in ("numba", "numpy")
