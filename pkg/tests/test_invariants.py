"""The checkers must both pass on healthy runs and actually detect the
corruption they claim to detect."""
import os

from hpimsim import invariants, netsim
from hpimsim.tree import AW_SELF, TreeRef

SCEN = os.path.join(os.path.dirname(__file__), "..", "scenarios", "paper")


def _converged_quad():
    return netsim.run(
        os.path.join(SCEN, "quad.topo"),
        os.path.join(SCEN, "quad_formation.scn"),
        seed=2,
    )


def test_all_checks_pass_on_converged_run():
    sim = _converged_quad()
    assert invariants.check_all(sim) == []


def test_aw_uniqueness_detects_double_claim():
    sim = _converged_quad()
    tref = TreeRef("10.1.0.100", "224.1.1.1")
    # corrupt R3 into claiming the R1-R3 link alongside R1
    sim.router("R3").trees[tref].per_if["i1"].assert_winner = AW_SELF
    bad = invariants.check_aw_uniqueness(sim)
    assert any("2 assert claimants" in v for v in bad)


def test_quiescent_correctness_detects_wrong_root():
    sim = _converged_quad()
    tref = TreeRef("10.1.0.100", "224.1.1.1")
    sim.router("R4").trees[tref].root_interface = "i2"
    assert any("shortest path" in v for v in invariants.check_quiescent_correctness(sim))


def test_sync_symmetry_detects_one_sided_view():
    sim = _converged_quad()
    nb = sim.router("R2").interfaces["i1"].neighbors["10.1.1.1"]
    from hpimsim.neighbor import SyncState

    sim.router("R1").interfaces["i2"].neighbors["10.1.1.2"].sync_state = SyncState.UNKNOWN
    assert nb.synced
    assert any("does not agree" in v for v in invariants.check_sync_symmetry(sim))


def test_loop_freedom_reports_cycles_when_prevention_disabled():
    sim = netsim.run(
        os.path.join(SCEN, "triangle_nofeas.topo"),
        os.path.join(SCEN, "triangle_feasibility_off.scn"),
        seed=2,
    )
    assert any("parent cycle" in v for v in invariants.check_loop_freedom(sim))
    # the always-meaningful subset still holds even in that configuration
    assert invariants.check_safety(sim) == []
