import numpy as np
import pytest

from gridpe.autodiff import NumericsError, Tensor
from gridpe.optim import AdamWState, adamw_step


def scalar_param(value=0.0):
    return {"p": Tensor(np.array([value], dtype=np.float64), requires_grad=True)}


def test_zero_grad_zero_decay_leaves_params_unchanged():
    params = scalar_param(1.5)
    params["p"].grad = np.zeros(1)
    state = AdamWState(weight_decay=0.0)
    adamw_step(params, state)
    assert params["p"].data[0] == 1.5
    assert state.step_count == 1


def test_first_step_with_unit_gradient_moves_by_lr():
    params = scalar_param(0.0)
    params["p"].grad = np.ones(1)
    state = AdamWState(lr=1e-4, weight_decay=0.0)
    adamw_step(params, state)
    # bias correction makes m_hat/sqrt(v_hat) = 1 exactly on step 1
    assert abs(params["p"].data[0] + 1e-4) < 1e-11


def test_decoupled_decay_shrinks_by_closed_form_factor():
    params = scalar_param(1.0)
    state = AdamWState(lr=1e-4, weight_decay=0.01)
    for k in range(1, 4):
        params["p"].grad = np.zeros(1)
        adamw_step(params, state)
        assert abs(params["p"].data[0] - (1 - 1e-4 * 0.01) ** k) < 1e-14


def test_step_count_strictly_increments():
    params = scalar_param()
    state = AdamWState()
    for k in range(1, 5):
        params["p"].grad = np.zeros(1)
        adamw_step(params, state)
        assert state.step_count == k


def test_nonfinite_gradient_aborts_with_diagnostics():
    params = scalar_param()
    params["p"].grad = np.array([np.nan])
    with pytest.raises(NumericsError, match="'p'"):
        adamw_step(params, AdamWState())


def test_moment_shapes_match_parameters():
    params = {"w": Tensor(np.zeros((3, 2)), requires_grad=True)}
    params["w"].grad = np.ones((3, 2), dtype=np.float32)
    state = AdamWState()
    adamw_step(params, state)
    assert state.first_moment["w"].shape == (3, 2)
    assert state.second_moment["w"].shape == (3, 2)


def test_grad_clip_rescales_large_gradients():
    params = {"w": Tensor(np.zeros(4), requires_grad=True)}
    params["w"].grad = np.full(4, 10.0)
    clipped = AdamWState(lr=1.0, weight_decay=0.0)
    adamw_step(params, clipped, grad_clip=1.0)
    unclipped_params = {"w": Tensor(np.zeros(4), requires_grad=True)}
    unclipped_params["w"].grad = np.full(4, 10.0)
    adamw_step(unclipped_params, AdamWState(lr=1.0, weight_decay=0.0))
    # same direction, and clipping must not change Adam's sign-scale structure
    assert np.all(params["w"].data < 0)
    assert np.all(unclipped_params["w"].data < 0)
