"""Causal-cone engine against dense references: cone shapes, reduced
density objects, fidelities, environments, and operation counting."""

import numpy as np
import pytest

from tmera.cones import (
    ConeError,
    cone_of,
    cone_fidelity,
    count_ops,
    descend_rho,
    environment,
    flops_estimate,
)
from tmera.state import (
    MeraGeometry,
    expand_dense,
    expand_to_juncture,
    random_state,
)
from tmera.exact import embed_two_site
from tmera.tensor import Tensor


def dense_bond_rho(psi, k, L):
    """Reduced density tensor of sites (k, k+1 mod L), axes (ket1, ket2, bra1, bra2)."""
    t = psi.reshape([2] * L)
    a = np.moveaxis(t, [k - 1, k % L], [0, 1])
    rest = list(range(2, L))
    return np.tensordot(a, a.conj(), axes=(rest, rest))


def perturb_in_cone(bra, other, cone):
    """Overwrite every in-cone tensor of ``bra`` (and the top weights) with
    the corresponding tensor of ``other``; out-of-cone slots untouched."""
    for i, lc in cone.levels.items():
        for j in lc.chi_pos:
            bra.set_chi(i, j, other.chi(i, j))
        for j in lc.gamma_pos:
            bra.set_gamma(i, j, other.gamma(i, j))
    bra.lam = other.lam.copy()


def test_cone_shape_small_example():
    g = MeraGeometry(ell=2, d=2, m=4)
    c = cone_of(g, 1)
    assert c.levels[2].alpha_in == (1, 2)
    assert c.levels[2].chi_pos == (4, 1)          # wrap tile plus tile one
    assert c.levels[2].gamma_pos == (4, 1, 2)
    assert c.levels[1].gamma_pos == (2, 1)
    assert c.sites == (1, 2)

    c = cone_of(g, 8)                              # wrap bond (8, 1)
    assert c.levels[2].alpha_in == (8, 1)
    assert c.sites == (8, 1)


def test_cone_growth_is_bounded():
    """No level ever holds more than 2 unitaries or 3 isometries, for any
    bond at any size — the property that makes updates O(log L)."""
    for ell in (1, 2, 3, 4, 5):
        g = MeraGeometry(ell=ell, d=2, m=4)
        for bond in range(1, g.L + 1):
            c = cone_of(g, bond)
            assert set(c.levels) == set(range(1, ell + 1))
            for i, lc in c.levels.items():
                assert 1 <= len(lc.chi_pos) <= 2
                assert len(lc.gamma_pos) <= 3
                assert len(lc.beta_in) == 2 * len(lc.chi_pos)
            assert c.levels[ell].alpha_in == (bond, bond % g.L + 1)


def test_cone_of_rejects_bad_bonds():
    g = MeraGeometry(ell=2, d=2, m=4)
    with pytest.raises(ConeError):
        cone_of(g, 0)
    with pytest.raises(ConeError):
        cone_of(g, 9)


def test_bottom_juncture_matches_dense_partial_trace():
    g = MeraGeometry(ell=2, d=2, m=4)
    st = random_state(g, np.random.default_rng(31))
    psi = expand_dense(st)
    for bond in range(1, g.L + 1):
        rho = descend_rho(st, cone_of(g, bond), g.ell, "chi")
        want = dense_bond_rho(psi, bond, g.L)
        assert np.allclose(rho.tensor.array, want, atol=1e-13)
        assert abs(rho.trace() - 1.0) < 1e-12
        mat = rho.matrix()
        assert np.allclose(mat, mat.conj().T)
        assert np.linalg.eigvalsh(mat).min() > -1e-12


def test_mid_level_junctures_match_expanded_state():
    g = MeraGeometry(ell=3, d=2, m=4)
    st = random_state(g, np.random.default_rng(32), ti=True)
    cone = cone_of(g, 5)
    for level in (1, 2, 3):
        for kind in ("chi", "gamma"):
            rho = descend_rho(st, cone, level, kind)
            full = np.asarray(expand_to_juncture(st, level, kind))
            w = full.ndim
            keep = [p - 1 for p in rho.legs]
            rest = [a for a in range(w) if a not in keep]
            want = np.tensordot(
                np.moveaxis(full, keep, range(len(keep))).reshape([full.shape[p] for p in keep] + [-1]),
                np.moveaxis(full, keep, range(len(keep))).conj().reshape([full.shape[p] for p in keep] + [-1]),
                axes=([len(keep)], [len(keep)]),
            )
            assert np.allclose(rho.tensor.array, want, atol=1e-12)


def test_cone_fidelity_equals_dense_overlap():
    """Perturb every in-cone tensor of the bra and feed a non-unitary gate;
    the cone contraction must still equal <bra|gate|ket> exactly."""
    g = MeraGeometry(ell=2, d=2, m=4)
    rng = np.random.default_rng(33)
    ket = random_state(g, rng)
    other = random_state(g, np.random.default_rng(34))
    gate = rng.standard_normal((2, 2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2, 2))
    for bond in range(1, g.L + 1):
        cone = cone_of(g, bond)
        bra = ket.clone()
        perturb_in_cone(bra, other, cone)
        got = cone_fidelity(ket, bra, cone, gate)
        want = expand_dense(bra).conj() @ (
            embed_two_site(gate.reshape(4, 4), bond, g.L) @ expand_dense(ket)
        )
        assert abs(got - want) < 1e-12


def test_identity_gate_on_equal_states_gives_one():
    g = MeraGeometry(ell=3, d=2, m=4)
    st = random_state(g, np.random.default_rng(35))
    eye = np.eye(4).reshape(2, 2, 2, 2)
    for bond in (1, 7, 16):
        assert abs(cone_fidelity(st, None, cone_of(g, bond), eye) - 1.0) < 1e-12


def test_environment_trace_identity():
    """vdot(tensor, environment-of-tensor) recovers the fidelity, for every
    in-cone target including the joint top."""
    g = MeraGeometry(ell=2, d=2, m=4)
    rng = np.random.default_rng(36)
    ket = random_state(g, rng)
    bra = ket.clone()
    perturb_in_cone(bra, random_state(g, np.random.default_rng(37)), cone_of(g, 3))
    gate = rng.standard_normal((2, 2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2, 2))
    cone = cone_of(g, 3)
    f = cone_fidelity(ket, bra, cone, gate)
    for i, lc in cone.levels.items():
        for j in lc.chi_pos:
            env = environment(ket, bra, cone, gate, ("chi", i, j))
            assert abs(np.vdot(bra.chi(i, j).array, env.array) - f) < 1e-12
        for j in lc.gamma_pos:
            env = environment(ket, bra, cone, gate, ("gamma", i, j))
            assert abs(np.vdot(bra.gamma(i, j).array, env.array) - f) < 1e-12
    env = environment(ket, bra, cone, gate, ("top",))
    top = cone.engine.top_ket(bra)
    assert abs(np.sum(env.array * top.conj()) - f) < 1e-12


def test_environment_rejects_out_of_cone_targets():
    g = MeraGeometry(ell=2, d=2, m=4)
    st = random_state(g, np.random.default_rng(38))
    cone = cone_of(g, 1)
    eye = np.eye(4).reshape(2, 2, 2, 2)
    out = next(j for j in range(1, 5) if j not in cone.levels[2].chi_pos)
    with pytest.raises(ConeError):
        environment(st, None, cone, eye, ("chi", 2, out))
    with pytest.raises(ConeError):
        environment(st, None, cone, eye, ("chi", 7, 1))
    with pytest.raises(ConeError):
        environment(st, None, cone, eye, ("what", 1, 1))


def test_count_ops_measures_and_nests():
    g = MeraGeometry(ell=3, d=2, m=4)
    st = random_state(g, np.random.default_rng(39))
    cone = cone_of(g, 1)
    with count_ops() as c1:
        descend_rho(st, cone, g.ell, "chi")
    assert c1.flops > 0
    with count_ops() as c2:
        descend_rho(st, cone, g.ell, "chi")
        descend_rho(st, cone, g.ell, "chi")
    assert c2.flops == 2 * c1.flops  # deterministic plans, deterministic count


def test_flops_report_structure():
    g = MeraGeometry(ell=3, d=2, m=4)
    rep = flops_estimate(g)
    assert rep.geometry is g
    assert rep.max_env_flops > 0
    assert rep.sweep_general > rep.sweep_ti > 0
    assert all(v > 0 for v in rep.env_flops.values())
