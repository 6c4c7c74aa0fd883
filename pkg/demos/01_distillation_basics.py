"""
Soft targets and the distillation loss
======================================

How temperature reshapes a teacher's output, what the KD loss measures,
and a quick check that backprop through it agrees with finite differences.
"""

# %%
import numpy as np

from fedodkd import DistillConfig, ModelSpec, distill_loss, forward, init_model, softmax_t
from fedodkd.nn_core import backward

np.set_printoptions(precision=4, suppress=True)

# %%
# A confident teacher. Raising T spreads its mass over the runner-up classes,
# which is the "dark knowledge" a student can pick up.
teacher = np.array([6.0, 2.5, 2.0, -1.0])
for T in (1.0, 3.0, 10.0):
    print(f"T={T:>4}: {softmax_t(teacher, T)}")

# %%
# The loss is KL(teacher || student) on softened outputs, scaled by T**2 so
# its gradient keeps roughly the same size as T changes.
cfg = DistillConfig(temperature=3.0)
for student in ([6.0, 2.5, 2.0, -1.0], [2.0, 6.0, 2.0, -1.0], [0.0, 0.0, 0.0, 0.0]):
    loss, grad = distill_loss(teacher, np.array(student), cfg)
    print(f"student {student}: loss {loss:.4f}, dL/dlogits {grad}")

# %%
# Push the gradient through a small MLP and compare one coordinate with a
# central difference.
spec = ModelSpec(input_dim=5, hidden_widths=(8,), num_classes=4)
params = init_model(spec, seed=0)
x = np.random.default_rng(1).normal(size=(3, 5))
t_logits = np.random.default_rng(2).normal(size=(3, 4))

_, dlogits = distill_loss(t_logits, forward(spec, params, x), cfg)
analytic = backward(spec, params, x, dlogits)

h, i = 1e-5, 7
bumped = [params.copy(), params.copy()]
bumped[0][i] += h
bumped[1][i] -= h
numeric = (distill_loss(t_logits, forward(spec, bumped[0], x), cfg)[0]
           - distill_loss(t_logits, forward(spec, bumped[1], x), cfg)[0]) / (2 * h)
print(f"param {i}: analytic {analytic[i]:.8f}, numeric {numeric:.8f}")
