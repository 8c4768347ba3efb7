"""Numerical kernel contracts: stencil values, wet/dry rules, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from scipy.integrate import solve_ivp

from blockswe.grid import Block
from blockswe.kernels import (
    BlockState,
    NumericsError,
    OutputAccumulators,
    accumulate_outputs,
    advance_closed_block,
    apply_edge_flux,
    update_mass,
    update_momentum,
)
from conftest import flat_block

DX, DT, G, THR = 10.0, 0.2, 9.81, 1e-5


def make_state(ni, nj, depth, eta0=None, manning_n=0.025):
    b = flat_block(1, (0.0, 0.0), ni, nj, depth, manning_n)
    st = BlockState(b)
    st.set_initial_eta(np.zeros((ni, nj)) if eta0 is None else eta0, THR)
    return st


class TestMassUpdate:
    def test_lake_at_rest_is_exact(self):
        st = make_state(10, 10, 25.0)
        update_mass(st, DX, DT, THR)
        assert np.all(st.interior(st.eta_new) == 0.0)

    def test_uniform_flux_is_divergence_free(self):
        st = make_state(10, 10, 25.0)
        st.m_old[:, :] = 1.0
        update_mass(st, DX, DT, THR)
        assert np.all(st.interior(st.eta_new) == 0.0)

    def test_hand_evaluated_stencil(self):
        # M_east - M_west = 0.5 at one cell: d_eta = -(dt/dx) * 0.5 = -0.01
        st = make_state(5, 5, 50.0)
        g = st.halo
        st.m_old[g + 3, g + 2] = 0.7
        st.m_old[g + 2, g + 2] = 0.2
        update_mass(st, DX, DT, THR)
        assert st.eta_new[g + 2, g + 2] == pytest.approx(-0.01, rel=1e-12)
        # neighbors see the complementary divergence, everything else is 0
        assert st.eta_new[g + 1, g + 2] == pytest.approx(-0.2 / 10.0 * (0.2 - 0.0))
        assert st.eta_new[g + 4, g + 4] == 0.0

    def test_dry_cells_without_flux_stay_bitwise(self):
        ni = nj = 8
        h = np.full((ni, nj), -3.0)          # all land
        st = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        eta0 = np.zeros((ni, nj))
        st.set_initial_eta(eta0, THR)
        update_mass(st, DX, DT, THR)
        assert np.array_equal(st.interior(st.eta_new), eta0)

    def test_inflow_onto_land_measures_from_bed(self):
        ni = nj = 5
        h = np.full((ni, nj), 10.0)
        h[2, 2] = -1.0                       # one land cell, bed at +1 m
        st = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        st.set_initial_eta(np.zeros((ni, nj)), THR)
        g = st.halo
        st.m_old[g + 2, g + 2] = 0.5         # inflow from the west face
        update_mass(st, DX, DT, THR)
        # inflow of (dt/dx)*0.5 = 0.01 m of water above the bed
        assert st.eta_new[g + 2, g + 2] == pytest.approx(1.0 + 0.01)
        assert st.h_ext[g + 2, g + 2] + st.eta_new[g + 2, g + 2] == \
            pytest.approx(0.01)

    def test_overdraft_clamps_to_bed(self):
        ni = nj = 5
        st = make_state(ni, nj, 0.001)       # 1 mm of water
        g = st.halo
        st.m_old[g + 3, g + 2] = 1.0         # drain cell (2,2) hard
        update_mass(st, DX, DT, THR)
        assert st.eta_new[g + 2, g + 2] == pytest.approx(-0.001)
        assert not st.wet[g + 2, g + 2]

    def test_non_finite_raises(self):
        st = make_state(5, 5, 10.0)
        st.m_old[3, 3] = np.nan
        with pytest.raises(NumericsError) as ei:
            update_mass(st, DX, DT, THR)
        assert "block 1" in str(ei.value)

    def test_old_buffer_untouched(self):
        st = make_state(6, 6, 10.0,
                        eta0=np.random.default_rng(0).normal(0, 0.01, (6, 6)))
        before = st.eta_old.copy()
        st.m_old[:, :] = 0.3
        update_mass(st, DX, DT, THR)
        assert np.array_equal(st.eta_old, before)


class TestMomentumUpdate:
    def test_rest_state_stays_zero(self):
        st = make_state(10, 10, 25.0)
        update_mass(st, DX, DT, THR)
        update_momentum(st, DX, DT, G, THR)
        assert np.all(st.m_new == 0.0)
        assert np.all(st.n_new == 0.0)

    def test_pressure_only_matches_hand_formula(self):
        # linear slope d_eta/dx = s, no friction: dM = -g * D * s * dt
        ni = nj = 12
        s = 2e-4
        x = (np.arange(ni) + 0.5) * DX
        eta0 = np.broadcast_to(s * x[:, None], (ni, nj)).copy()
        st = make_state(ni, nj, 30.0, eta0=eta0, manning_n=0.0)
        update_mass(st, DX, DT, THR)
        update_momentum(st, DX, DT, G, THR)
        g = st.halo
        for i in (2, 6, 9):
            d_face = 30.0 + s * (x[i - 1] + x[i]) / 2.0
            expected = -G * d_face * s * DT
            assert st.m_new[g + i, g + 5] == pytest.approx(expected, rel=1e-12)
        assert np.all(st.n_new[g:g + ni, g + 1:g + nj] == 0.0)

    def test_friction_step_equals_quadratic_drag_ode(self):
        # uniform M, flat eta, N=0: the semi-implicit step solves
        # dM/dt = -g n^2 M |M| / D^(7/3) exactly over one step
        depth, nman, m0 = 8.0, 0.03, 2.5
        st = make_state(10, 10, depth, manning_n=nman)
        st.m_old[:, :] = m0
        update_mass(st, DX, DT, THR)
        update_momentum(st, DX, DT, G, THR)
        c = G * nman**2 / depth ** (7.0 / 3.0)
        ode = solve_ivp(lambda t, m: -c * m * np.abs(m), (0.0, DT), [m0],
                        rtol=1e-12, atol=1e-14).y[0, -1]
        g = st.halo
        got = st.m_new[g + 5, g + 5]
        assert got == pytest.approx(ode, rel=1e-9)
        assert 0.0 < got < m0

    @hsettings(max_examples=30, deadline=None)
    @given(m0=st.floats(-8.0, 8.0, allow_nan=False),
           depth=st.floats(0.5, 50.0),
           nman=st.floats(0.005, 0.08))
    def test_friction_never_flips_sign(self, m0, depth, nman):
        state = make_state(6, 6, depth, manning_n=nman)
        state.m_old[:, :] = m0
        update_mass(state, DX, DT, THR)
        update_momentum(state, DX, DT, G, THR)
        g = state.halo
        inner = state.m_new[g + 1:g + 6, g:g + 6]
        if m0 == 0.0:
            assert np.all(inner == 0.0)
        else:
            assert np.all(np.sign(inner) == np.sign(m0))
            assert np.all(np.abs(inner) <= abs(m0))

    def test_dry_faces_carry_no_flux(self):
        ni = nj = 8
        h = np.full((ni, nj), 10.0)
        h[4:, :] = -2.0                      # east half is land at +2 m
        stt = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        stt.set_initial_eta(np.full((ni, nj), 0.5), THR)  # below the land
        update_mass(stt, DX, DT, THR)
        update_momentum(stt, DX, DT, G, THR)
        g = stt.halo
        assert np.all(stt.m_new[g + 5:g + ni + 1, :] == 0.0)

    def test_flooding_face_pushes_toward_land(self):
        ni = nj = 6
        h = np.full((ni, nj), 10.0)
        h[3:, :] = -0.2                      # low berm
        stt = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        stt.set_initial_eta(np.where(np.arange(ni)[:, None] < 3, 0.5, 0.0)
                            * np.ones((ni, nj)), THR)
        update_mass(stt, DX, DT, THR)
        update_momentum(stt, DX, DT, G, THR)
        g = stt.halo
        # face between wet column 2 and dry column 3: surface 0.5 > bed 0.2
        assert np.all(stt.m_new[g + 3, g:g + nj] > 0.0)

    def test_radiation_edge_copies_outgoing_flux(self):
        st = make_state(8, 8, 10.0)
        st.m_new[:, :] = 0.0
        g = st.halo
        st.m_new[g + 1, g:g + 8] = 0.7
        apply_edge_flux(st, "west", "radiation")
        assert np.all(st.m_new[g, g:g + 8] == 0.7)
        apply_edge_flux(st, "west", "reflective")
        assert np.all(st.m_new[g, g:g + 8] == 0.0)


class TestAccumulators:
    def test_all_dry_block_unchanged(self):
        ni = nj = 6
        stt = BlockState(Block(1, (0.0, 0.0), ni, nj, np.full((ni, nj), -4.0)))
        stt.set_initial_eta(np.zeros((ni, nj)), THR)
        acc = OutputAccumulators(ni, nj)
        update_mass(stt, DX, DT, THR)
        update_momentum(stt, DX, DT, G, THR)
        accumulate_outputs(stt, acc, THR)
        assert np.all(acc.max_eta == 0.0)
        assert np.all(acc.max_speed == 0.0)
        assert np.all(acc.max_inundation == 0.0)

    def test_max_of_sequence(self):
        ni = nj = 4
        stt = make_state(ni, nj, 10.0)
        acc = OutputAccumulators(ni, nj)
        g = stt.halo
        for value in (0.3, 0.1):
            stt.eta_new[g:g + ni, g:g + nj] = value
            accumulate_outputs(stt, acc, THR)
        assert np.all(acc.max_eta == 0.3)

    def test_monotone_eta_gives_final_value(self):
        ni = nj = 4
        stt = make_state(ni, nj, 10.0)
        acc = OutputAccumulators(ni, nj)
        g = stt.halo
        for value in (0.05, 0.1, 0.2, 0.4):
            stt.eta_new[g:g + ni, g:g + nj] = value
            accumulate_outputs(stt, acc, THR)
        assert np.all(acc.max_eta == 0.4)

    def test_inundation_on_land_only(self):
        ni = nj = 4
        h = np.full((ni, nj), 5.0)
        h[2, 2] = -0.5
        stt = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        stt.set_initial_eta(np.full((ni, nj), 1.0), THR)   # floods the land
        acc = OutputAccumulators(ni, nj)
        accumulate_outputs(stt, acc, THR)
        assert acc.max_inundation[2, 2] == pytest.approx(0.5)
        assert np.count_nonzero(acc.max_inundation) == 1

    def test_accumulators_non_decreasing(self):
        ni = nj = 24
        x = (np.arange(ni) + 0.5) * DX
        y = (np.arange(nj) + 0.5) * DX
        eta0 = 0.5 * np.exp(-(((x[:, None] - 120) ** 2
                               + (y[None, :] - 120) ** 2)) / 50.0**2)
        stt = make_state(ni, nj, 20.0, eta0=eta0)
        acc = OutputAccumulators(ni, nj)
        prev = [acc.max_eta.copy(), acc.max_speed.copy(),
                acc.max_inundation.copy()]

        def check(state):
            nonlocal prev
            cur = [acc.max_eta.copy(), acc.max_speed.copy(),
                   acc.max_inundation.copy()]
            for p, c in zip(prev, cur):
                assert np.all(c >= p)
            prev = cur

        advance_closed_block(stt, DX, DT, G, THR, 50, acc, on_step=check)


class TestClosedBlockInvariants:
    def test_mass_conservation_with_wetting_margin(self):
        # closed basin, no drying: total volume drifts below 1e-10 relative
        ni = nj = 60
        x = (np.arange(ni) + 0.5) * DX
        y = (np.arange(nj) + 0.5) * DX
        eta0 = 1.0 * np.exp(-(((x[:, None] - 300) ** 2
                               + (y[None, :] - 300) ** 2)) / 80.0**2)
        stt = make_state(ni, nj, 50.0, eta0=eta0)
        water0 = float(np.sum(50.0 + eta0)) * DX * DX
        vol0 = float(np.sum(eta0)) * DX * DX
        advance_closed_block(stt, DX, DT, G, THR, 300)
        vol1 = float(np.sum(stt.interior(stt.eta_old))) * DX * DX
        assert abs(vol1 - vol0) / water0 < 1e-10

    def test_determinism_bitwise(self):
        def run():
            ni = nj = 30
            x = (np.arange(ni) + 0.5) * DX
            eta0 = 0.3 * np.exp(-((x[:, None] - 150) ** 2
                                  + (x[None, :] - 150) ** 2) / 60.0**2)
            stt = make_state(ni, nj, 30.0, eta0=eta0)
            advance_closed_block(stt, DX, DT, G, THR, 40)
            return stt.interior(stt.eta_old).copy(), stt.m_old.copy()

        (e1, m1), (e2, m2) = run(), run()
        assert np.array_equal(e1, e2) and np.array_equal(m1, m2)

    def test_runup_on_beach_stays_finite_and_floods(self):
        ni, nj = 60, 30
        x = (np.arange(ni) + 0.5) * DX
        h = np.broadcast_to((8.0 - 0.02 * x)[:, None], (ni, nj)).copy()
        assert h.min() < -2.0  # dry land at the east end
        b = Block(1, (0.0, 0.0), ni, nj, h)
        stt = BlockState(b)
        eta0 = 0.6 * np.exp(-((x[:, None] - 120.0) ** 2
                              + ((np.arange(nj)[None, :] + 0.5) * DX - 150.0) ** 2)
                            / 60.0**2)
        stt.set_initial_eta(np.where(h > 0, eta0, 0.0), THR)
        acc = OutputAccumulators(ni, nj)
        advance_closed_block(stt, DX, DT, G, THR, 400, acc)
        land = h < 0
        eta = stt.interior(stt.eta_old)
        assert np.all(np.isfinite(eta))
        assert acc.max_inundation[land].max() > 0.0   # shoreline moved inland
        # every cell the solver touched satisfies D >= 0 (untouched dry land
        # keeps its initial stale eta by design)
        d = stt.h_ext[stt.halo:-stt.halo, stt.halo:-stt.halo] + eta
        touched = eta != 0.0
        assert d[touched].min() >= -1e-12


class TestFaultGuard:
    def test_corrupted_wet_flags_trip_fault(self):
        from blockswe.kernels import KernelFaultError

        ni = nj = 8
        h = np.full((ni, nj), 2.0)           # shallow shelf
        h[5:, :] = -3.0                      # land, stays dry
        stt = BlockState(Block(1, (0.0, 0.0), ni, nj, h))
        stt.set_initial_eta(np.zeros((ni, nj)), THR)
        update_mass(stt, DX, DT, THR)
        g = stt.halo
        stt.wet[g + 5, g + 3] = True         # lie about one land cell
        with pytest.raises(KernelFaultError) as ei:
            update_momentum(stt, DX, DT, G, THR)
        assert "block 1" in str(ei.value)

    def test_friction_contracts_every_face_randomized(self):
        # friction divides the frictionless face update by (1 + fr), fr >= 0:
        # per face the sign is preserved and the magnitude never grows
        rng = np.random.default_rng(123)
        for _ in range(5):
            ni = nj = 10
            eta0 = 0.2 * rng.standard_normal((ni, nj))
            base = flat_block(1, (0.0, 0.0), ni, nj, 20.0, manning_n=0.0)
            rough = flat_block(1, (0.0, 0.0), ni, nj, 20.0, manning_n=0.04)
            m0 = rng.standard_normal((ni + 5, nj + 4))
            n0 = rng.standard_normal((ni + 4, nj + 5))
            results = []
            for blk in (base, rough):
                stt = BlockState(blk)
                stt.set_initial_eta(eta0, THR)
                stt.m_old[:, :] = m0
                stt.n_old[:, :] = n0
                update_mass(stt, DX, DT, THR)
                update_momentum(stt, DX, DT, G, THR)
                g = stt.halo
                results.append(stt.m_new[g:g + ni + 1, g:g + nj].copy())
            frictionless, withfriction = results
            flip = frictionless * withfriction < 0.0
            assert not np.any(flip)
            assert np.all(np.abs(withfriction) <= np.abs(frictionless) + 1e-15)
