"""Parameter and multiply-accumulate accounting for every group count.

Prints the reference-convention table (conv + fc weights, 12 outputs) for
both connection modes and all L, then one full per-layer report, then the
implementation-convention census cross-checked against an instantiated
model.
"""
import numpy as np

from cednn.analysis import complexity_report, verify_param_census
from cednn.model import ModelConfig, build_model

print(f"{'connection':<10} {'L':>3} {'params':>12} {'MACs':>14} "
      f"{'params(M)':>10} {'MACs(G)':>8}")
for connection in ("res", "dense"):
    for l in (1, 2, 3, 6, 9, 18):
        r = complexity_report(ModelConfig(connection=connection, groups=l))
        print(f"{connection:<10} {l:>3} {r.total_params:>12,} "
              f"{r.total_macs:>14,} {r.total_params / 1e6:>10.2f} "
              f"{r.total_macs / 1e9:>8.2f}")

print("\nfull per-layer report, res L=18:\n")
print(complexity_report(ModelConfig()).to_text())

# the implementation convention counts what actually trains
config = ModelConfig(num_blocks=2, input_size=28, d=5, se_mode="after_block",
                     reduction_channels=36, top_channels=32)
params = build_model(config, seed=0)
impl = complexity_report(config, "implementation")
print("implementation census for a small SE model:",
      f"{impl.total_params:,} parameters;",
      "matches the built model:" , verify_param_census(config, params))
print("layer census:", impl.layer_census())
assert impl.total_params == sum(
    int(np.prod(a.shape)) for _, a, t in params.named_arrays() if t)
