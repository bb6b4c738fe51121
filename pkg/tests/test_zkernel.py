"""Discretized noise grids: normalization, reversibility, convergence."""

import numpy as np
import pytest

from pmtune import zkernel as zk
from pmtune.gaussnoise import inv_accept_integral, mean_accept_z


class TestGrids:
    @pytest.mark.parametrize("builder,kwargs", [
        (zk.gauss_hermite_zgrid, {"m": 32}),
        (zk.uniform_zgrid, {"m": 501}),
    ])
    def test_normalization_exact(self, builder, kwargs):
        grid = builder(1.3, **kwargs)
        assert grid.g.sum() == pytest.approx(1.0, abs=1e-14)
        assert float(grid.g @ np.exp(grid.z)) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_grid(self):
        grid = zk.degenerate_zgrid()
        assert grid.m == 1 and grid.z[0] == 0.0 and grid.rho[0] == 1.0

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            zk.ZGrid(sigma=1.0, z=np.array([0.0, 1.0]), g=np.array([0.5, 0.6]))


class TestJumpKernel:
    def test_rows_stochastic_and_reversible(self):
        grid = zk.uniform_zgrid(1.0, m=301)
        kernel, stationary, rho = zk.jump_kernel_z(grid)
        np.testing.assert_allclose(kernel.sum(axis=1), 1.0, atol=1e-13)
        flux = stationary[:, None] * kernel
        np.testing.assert_allclose(flux, flux.T, atol=1e-15)
        assert np.all(rho > 0) and np.all(rho <= 1.0 + 1e-15)

    def test_functionals_match_continuous_forms(self):
        for sigma in (0.5, 1.0, 2.0):
            zf = zk.gaussian_z_functionals(sigma, m=2001)
            assert zf.mean_accept == pytest.approx(mean_accept_z(sigma), abs=2e-5)
            assert zf.inv_accept == pytest.approx(inv_accept_integral(sigma), rel=2e-5)

    def test_grid_refinement_converges(self):
        coarse = zk.zgrid_functionals(zk.uniform_zgrid(0.92, m=501))
        fine = zk.zgrid_functionals(zk.uniform_zgrid(0.92, m=4001, span=10.0))
        assert coarse.phi1 == pytest.approx(fine.phi1, abs=2e-5)
        assert coarse.if_z == pytest.approx(fine.if_z, abs=5e-5)

    def test_gauss_hermite_agrees_with_uniform(self):
        gh = zk.zgrid_functionals(zk.gauss_hermite_zgrid(1.0, m=64))
        uni = zk.zgrid_functionals(zk.uniform_zgrid(1.0, m=2001))
        # small-m quadrature grid tracks the continuous law loosely; it is
        # exact for its own discrete chain, which is all verification needs
        assert gh.if_z == pytest.approx(uni.if_z, abs=0.02)
        assert gh.phi1 == pytest.approx(uni.phi1, abs=0.02)

    def test_phi_sequence_head(self):
        grid = zk.uniform_zgrid(1.0, m=801)
        phi = zk.phi_sequence_z(grid, 5)
        zf = zk.zgrid_functionals(grid)
        assert phi[0] == pytest.approx(zf.phi1, abs=1e-14)
        assert np.all(phi > 0) and np.all(np.diff(phi) < 0)
