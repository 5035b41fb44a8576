"""Absorbing walls and the boundary layer.

Walkers that jump past x = 0 or x = 1 stop forever. The interior mass decays
at the rate of the slowest mode, which diffusion theory puts at D pi^2. The
jump process sees an effective interval slightly longer than one, so its rate
is a few percent lower. The mismatch lives in a layer about one jump long.

Run: python3 demos/03_absorbing_walls.py
"""
import json
import tempfile

from metransport.experiments import parse_config, run_scenario

with tempfile.TemporaryDirectory() as out:
    smooth = run_scenario(parse_config('{"run": {"refine": true}}', scenario="S2_absorbing_smooth"), out)
    sharp = run_scenario(parse_config(json.dumps({"run": {"refine": True}}),
                                      scenario="S3_sharp_interface"), out)

m = smooth.metrics
print(f"slowest rate, master equation: {m['me_rate']:.6f}")
print(f"slowest rate, D pi^2:          {m['fpe_rate_analytic']:.6f}")
print(f"ratio {m['rate_ratio']:.3f}, and {m['refined_rate_ratio']:.3f} with sigma halved")
print(f"extrapolation length / sigma: {m['extrapolation_length_over_width']:.2f}")

s = sharp.metrics
print(f"\nsharp walls: discrepancy above 5% reaches {s['boundary_layer_width']:.4f} into the domain")
print(f"mean jump length {s['mean_jump_length']:.4f}; doubling sigma scales the layer by "
      f"{s['width_doubling_ratio']:.2f}")
