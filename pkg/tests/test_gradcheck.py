import numpy as np
import pytest

from thoraxseg.autograd import Tensor
from thoraxseg.errors import UsageError
from thoraxseg.gradcheck import (STANDARD_CHECKS, check_gradients,
                                 numeric_gradients, run_standard_checks)


def test_numeric_gradient_of_quadratic():
    x = Tensor(np.array([2.0, -1.5]), requires_grad=True)
    grads = numeric_gradients(lambda: (x * x).sum(), [x])
    np.testing.assert_allclose(grads[0], [4.0, -3.0], atol=1e-8)


def test_check_gradients_detects_a_wrong_backward():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def broken():
        out = x * x
        parent = out._backward

        def wrong(grad):
            x._accumulate(grad * 3.0 * x.data)  # should be 2x

        out._backward = wrong
        return out.sum()

    result = check_gradients("broken", broken, [x])
    assert not result.passed
    assert result.max_rel_err > 0.2


def test_scalar_output_required():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        check_gradients("vec", lambda: x * 2.0, [x])


def test_requires_grad_enforced():
    x = Tensor(np.ones(3))
    with pytest.raises(UsageError):
        check_gradients("nograd", lambda: x.sum(), [x])


def test_element_budget_enforced():
    x = Tensor(np.ones(10_001), requires_grad=True)
    with pytest.raises(UsageError):
        check_gradients("big", lambda: x.sum(), [x])


def test_unknown_name_rejected():
    with pytest.raises(UsageError, match="unknown gradient check"):
        run_standard_checks(["arith", "definitely_not_a_check"])


def test_registry_covers_every_op_family():
    expected = {
        "arith", "activations", "softmax", "conv2d", "conv2d_strided",
        "max_pool2d", "upsample_concat", "batch_norm_train", "batch_norm_eval",
        "convlstm_step", "biconvlstm_fuse", "attention_gate",
        "dice_loss", "tversky_loss", "focal_tversky_loss", "model_ftl",
    }
    assert expected == set(STANDARD_CHECKS)


def test_selected_fast_checks_pass():
    for result in run_standard_checks(["arith", "softmax", "max_pool2d"], seed=1):
        assert result.passed, f"{result.name}: {result.max_rel_err}"
