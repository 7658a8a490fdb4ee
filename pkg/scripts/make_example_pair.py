"""Write the bundled example RCT/observational CSV pair used by the test-pair config.

The pair comes from the linear generator with beta_u = 2 and delta_a = 2, so
the two datasets estimate effects that differ by 4.

Usage: python scripts/make_example_pair.py [output_dir]
"""

import sys
from pathlib import Path

import pandas as pd

from unconfound.scenarios import LinearScenario, generate_linear
from unconfound.statcore import substream

SEED = 2024


def write(dataset, path):
    pd.DataFrame({"A": dataset.a, "Y": dataset.y.round(6), "x": dataset.x[:, 0].round(6)}).to_csv(path, index=False)


def main(out_dir):
    out_dir = Path(out_dir)
    rct, obs = generate_linear(LinearScenario(beta_u=2.0, delta_a=2.0), substream(SEED, 0))
    write(rct, out_dir / "example_rct.csv")
    write(obs, out_dir / "example_obs.csv")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/unconfound/data")
