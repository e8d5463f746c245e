"""Hierarchy integration, quasi-steady references, sweeps, reduced models."""

import numpy as np
import pytest

from ltnet import (
    ControlLaw,
    Hierarchy,
    LTNetwork,
    certify_hierarchy,
    clip_box,
    epsilon_sweep,
    feedback_gain_bilayer,
    feedforward_bilayer,
    multilayer_controls,
    reference_trajectory,
    rom_simulate,
    simulate,
    simulate_hierarchy,
    tracking_error,
)

from helpers import joint_fixed_point, lc_hierarchy

W_OSC = np.array([
    [0.0, -0.8, -1.7],
    [-1.0, 0.0, -0.5],
    [-0.7, -1.8, 0.0],
])
W_RECRUIT = np.array([[0.0, 0.9, 1.2], [0.7, 0.0, 1.0], [0.8, 0.2, 0.0]])


def oscillator_bilayer():
    layers = (
        LTNetwork(W_OSC, np.array([11.0, 10.0, 10.0]), np.full(3, np.inf), tau=3.3),
        LTNetwork(W_RECRUIT, np.array([2.0, 3.5, 2.5]), np.full(3, np.inf),
                  tau=1.65, B=np.array([[-1.0], [0.0], [0.0]]), r=1),
    )
    return Hierarchy(layers, (np.zeros((3, 3)),), (-np.eye(3),))


def test_hierarchy_validation():
    l1 = LTNetwork(np.zeros((2, 2)), np.zeros(2), np.full(2, np.inf), tau=1.0)
    l2 = LTNetwork(np.zeros((3, 3)), np.zeros(3), np.full(3, np.inf), tau=0.5)
    with pytest.raises(ValueError, match="W_down"):
        Hierarchy((l1, l2), (np.zeros((3, 2)),), (np.zeros((3, 2)),))
    with pytest.raises(ValueError, match="W_up"):
        Hierarchy((l1, l2), (np.zeros((2, 3)),), (np.zeros((2, 3)),))
    with pytest.raises(ValueError, match="blocks"):
        Hierarchy((l1, l2), (), ())
    with pytest.raises(ValueError, match="decrease"):
        Hierarchy(
            (l1, LTNetwork(np.zeros((3, 3)), np.zeros(3), np.full(3, np.inf), tau=1.0)),
            (np.zeros((2, 3)),), (np.zeros((3, 2)),),
        )
    with pytest.raises(ValueError, match="r1"):
        Hierarchy(
            (LTNetwork(np.zeros((2, 2)), np.zeros(2), np.full(2, np.inf),
                       B=np.ones((2, 1)), r=1), l2),
            (np.zeros((2, 3)),), (np.zeros((3, 2)),),
        )


def test_eps_and_rescaling():
    h = lc_hierarchy()
    np.testing.assert_allclose(h.eps, (0.5, 0.7 / 1.68))
    scaled = h.with_eps(0.1)
    np.testing.assert_allclose([la.tau for la in scaled.layers],
                               [3.36, 0.336, 0.0336])
    # weights and inputs are untouched
    np.testing.assert_array_equal(scaled.layers[1].W, h.layers[1].W)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError, match="eps"):
            h.with_eps(bad)
    assert h.slices() == [slice(0, 1), slice(1, 3), slice(3, 4)]


def test_single_layer_matches_simulate():
    net = LTNetwork(np.array([[0.5]]), np.array([1.0]), np.array([np.inf]), tau=2.0)
    h = Hierarchy((net,), (), ())
    joint = simulate_hierarchy(h, x0=[np.array([0.5])], t_span=(0.0, 5.0))
    alone = simulate(net, np.array([0.5]), t_span=(0.0, 5.0))
    assert np.max(np.abs(joint[0].samples - alone.samples)) < 1e-12


def test_stacked_matches_manual_rk4():
    h = lc_hierarchy()
    x0 = [np.array([0.2]), np.array([1.0, 0.5]), np.array([0.1])]
    dt = 0.01
    trajs = simulate_hierarchy(h, x0=x0, t_span=(0.0, 2.0), dt=dt)

    taus = np.array([3.36, 1.68, 1.68, 0.7])
    ms = np.concatenate([la.m for la in h.layers])
    cs = np.concatenate([la.c for la in h.layers])
    Wfull = np.zeros((4, 4))
    Wfull[0:1, 0:1] = h.layers[0].W
    Wfull[0:1, 1:3] = h.W_down[0]
    Wfull[1:3, 0:1] = h.W_up[0]
    Wfull[1:3, 1:3] = h.layers[1].W
    Wfull[1:3, 3:4] = h.W_down[1]
    Wfull[3:4, 1:3] = h.W_up[1]
    Wfull[3:4, 3:4] = h.layers[2].W

    def f(x):
        return (-x + clip_box(Wfull @ x + cs, ms)) / taus

    x = np.concatenate(x0)
    manual = [x.copy()]
    for _ in range(200):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = clip_box(x + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4), ms)
        manual.append(x.copy())
    manual = np.array(manual)
    got = np.hstack([t.samples for t in trajs])
    assert np.max(np.abs(got - manual)) < 1e-12


def test_x1_override_scripts_top_layer():
    h = oscillator_bilayer()

    def script(t):
        return np.array([1.0 + 0.5 * np.sin(t), 2.0, 1.5])

    trajs = simulate_hierarchy(h, x0=None, t_span=(0.0, 5.0), dt=0.02,
                               x1_override=script)
    np.testing.assert_allclose(
        trajs[0].samples, np.array([script(t) for t in trajs[0].times]),
        atol=1e-12,
    )
    # the lower layer integrates against the scripted drive
    assert np.std(trajs[1].samples[:, 1]) > 0.01


def test_controlled_bilayer_silences_inhibited_node():
    h = oscillator_bilayer()
    net2 = h.layers[1]
    K = feedback_gain_bilayer(net2)
    nu = np.array([0.0, 7.5, 4.0])  # monotone bound on the recruited block
    ubar = feedforward_bilayer(net2, np.full(3, 6.0), nu, -np.eye(3))
    law = ControlLaw(layer=2, K=K, ubar=ubar, mode="combined")
    x0 = [np.array([2.0, 6.0, 3.0]), np.array([6.0, 0.1, 0.1])]
    trajs = simulate_hierarchy(h, [None, law], x0, (0.0, 10 * net2.tau),
                               dt=net2.tau / 50.0)
    inhibited = trajs[1].samples[:, 0]
    assert inhibited[-1] <= 1e-3 * inhibited[0]
    # the logged input is the applied total control, always nonnegative
    assert trajs[1].input_log.shape == (len(trajs[1].times), 1)
    assert np.all(trajs[1].input_log >= -1e-12)


def test_reference_trajectory_bottom_layer():
    h = oscillator_bilayer()
    trajs = simulate_hierarchy(h, x0=[np.array([2.0, 6.0, 3.0]), np.zeros(3)],
                               t_span=(0.0, 10.0), dt=0.03)
    ref = reference_trajectory(h, trajs[0], 2)
    net = h.layers[1]
    assert np.all(ref.samples[:, 0] == 0.0)  # inhibited row pinned at zero
    # every sample solves the recruited fixed-point equation given x1(t)
    Wpp = net.W[1:, 1:]
    drive = trajs[0].samples @ h.W_up[0][1:, :].T + net.c[1:]
    resid = ref.samples[:, 1:] - np.maximum(
        ref.samples[:, 1:] @ Wpp.T + drive, 0.0
    )
    assert np.max(np.abs(resid)) < 1e-8


def test_reference_trajectory_scalar_chain():
    layers = (
        LTNetwork(np.zeros((1, 1)), np.array([2.0]), np.array([np.inf]), tau=1.0),
        LTNetwork(np.array([[0.5]]), np.array([0.3]), np.array([np.inf]), tau=0.4),
    )
    h = Hierarchy(layers, (np.zeros((1, 1)),), (np.array([[0.6]]),))
    trajs = simulate_hierarchy(h, t_span=(0.0, 8.0), dt=0.008)
    ref = reference_trajectory(h, trajs[0], 2)
    # h(d) = 2 d on the active branch
    expected = 2.0 * (0.6 * trajs[0].samples[:, 0] + 0.3)
    np.testing.assert_allclose(ref.samples[:, 0], expected, atol=1e-10)
    with pytest.raises(ValueError, match="layer"):
        reference_trajectory(h, trajs[0], 3)


def test_reference_requires_map_above_bottom():
    h = lc_hierarchy()
    trajs = simulate_hierarchy(h, t_span=(0.0, 1.0), dt=0.01)
    with pytest.raises(ValueError, match="pa_map"):
        reference_trajectory(h, trajs[0], 2)


def test_tracking_error_basics():
    h = oscillator_bilayer()
    trajs = simulate_hierarchy(h, t_span=(0.0, 2.0), dt=0.02)
    assert tracking_error(trajs[1], trajs[1], (0.5, 1.5)) == 0.0
    other = simulate_hierarchy(h, t_span=(0.0, 2.0), dt=0.04)
    with pytest.raises(ValueError, match="grid"):
        tracking_error(trajs[1], other[1], (0.5, 1.5))
    with pytest.raises(ValueError, match="window"):
        tracking_error(trajs[1], trajs[1], (5.0, 6.0))


def test_epsilon_sweep_tightens_slaving():
    h = oscillator_bilayer()
    net2 = h.layers[1]
    K = feedback_gain_bilayer(net2)
    ubar = feedforward_bilayer(net2, np.full(3, 6.0), np.array([0.0, 7.5, 4.0]),
                               -np.eye(3))
    law = ControlLaw(layer=2, K=K, ubar=ubar, mode="combined")
    x0 = [np.array([2.0, 6.0, 3.0]), np.array([0.02, 0.1, 0.1])]
    report = epsilon_sweep(h, [None, law], (0.5, 0.25), x0=x0)
    assert report.errors_monotone[2]
    assert report.inhibited_monotone[2]
    assert report.errors[2][1] < report.errors[2][0]
    assert report.inhibited[2][-1] < 1e-3
    blob = report.to_dict()
    assert blob["eps"] == [0.5, 0.25]
    assert blob["tracking_monotone"]["2"] is True


def test_epsilon_sweep_stationary_at_equilibrium():
    h = lc_hierarchy()
    # the top layer settles at its ceiling; the pair below at the joint
    # fixed point driven by it
    x1 = np.array([1.0])
    x2, x3 = joint_fixed_point(
        h.layers[1].W, h.W_down[1], h.W_up[1], h.layers[2].c,
        np.full(2, np.inf), h.layers[2].W, np.array([np.inf]),
        h.W_up[0] @ x1 + h.layers[1].c,
    )
    cert = certify_hierarchy(h)
    report = epsilon_sweep(h, None, (0.5, 0.2), x0=[x1, x2, x3],
                           maps=cert.maps)
    for i in (2, 3):
        assert max(report.errors[i]) < 1e-6
    assert report.inhibited == {}


def test_rom_matches_decoupled_top_layer():
    h = oscillator_bilayer()
    cert = certify_hierarchy(h)
    x0 = np.array([2.0, 6.0, 3.0])
    rom = rom_simulate(h, cert.maps[2], x0=x0, t_span=(0.0, 20.0))
    alone = simulate(h.layers[0], x0, t_span=(0.0, 20.0))
    # downward coupling is zero here, so the reduced model is exact
    assert np.max(np.abs(rom.samples - alone.samples)) < 1e-12


def test_rom_tracks_full_system_at_small_eps():
    layers = (
        LTNetwork(np.zeros((1, 1)), np.array([1.0]), np.array([3.0]), tau=1.0),
        LTNetwork(np.array([[0.2, 0.1], [0.1, 0.3]]), np.array([0.5, 0.4]),
                  np.full(2, np.inf), tau=0.02),
    )
    h = Hierarchy(layers, (np.array([[0.4, 0.3]]),),
                  (np.array([[0.5], [0.2]]),))
    cert = certify_hierarchy(h)
    assert cert.all_passed
    full = simulate_hierarchy(h, t_span=(0.0, 10.0), dt=0.0004)
    rom = rom_simulate(h, cert.maps[2], t_span=(0.0, 10.0), dt=0.02)
    stride = round(0.02 / 0.0004)
    gap = np.max(np.abs(full[0].samples[::stride, 0] - rom.samples[:, 0]))
    assert gap < 5e-2
    with pytest.raises(ValueError, match="layer below"):
        rom_simulate(Hierarchy((layers[0],), (), ()), cert.maps[2])
