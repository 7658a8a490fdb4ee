"""Regenerate the synthetic STAR-format stand-in shipped for the semi-synthetic workflow.

The real STAR extract is not redistributed.  This file has the same schema
(treatment ``small``, outcome ``score`` and the demographic and school-location
covariates) with 4165 complete rows, 1498 of them treated, plus some rows with
missing cells.  Every value is simulated; none comes from the study.

School location carries most of the outcome variation and the remaining
covariates only a little, so a selection rule keyed on location and outcome
rank produces confounding that is removable by observing the location column.

Usage: python scripts/make_star_standin.py [output.csv]
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd

SEED = 20240917
N_CLEAN = 4165
N_TREATED = 1498
N_INCOMPLETE = 160
EFFECT = 25.0

LOCATIONS = ["inner-city", "suburban", "rural", "urban"]
LOCATION_SHARE = [0.22, 0.24, 0.42, 0.12]
LOCATION_MEAN = {"inner-city": 35.0, "suburban": -25.0, "rural": 25.0, "urban": -35.0}


def simulate(rng, n):
    school = rng.choice(LOCATIONS, size=n, p=LOCATION_SHARE)
    inner = school == "inner-city"
    race = np.where(rng.random(n) < np.where(inner, 0.75, 0.25), "black", "white")
    race = np.where(rng.random(n) < 0.01, "other", race)
    gender = np.where(rng.random(n) < 0.49, "female", "male")
    lunch = np.where(rng.random(n) < np.where(inner, 0.8, 0.4), "free", "non-free")
    birth = np.round(1980.0 + rng.normal(0.0, 0.35, n), 2)
    base = 900.0 + np.vectorize(LOCATION_MEAN.get)(school)
    base += 2.0 * (gender == "female") - 2.0 * (lunch == "free")
    return pd.DataFrame(
        {"gender": gender, "race": race, "birth": birth, "lunch": lunch, "school": school, "base": base}
    )


def main(out):
    rng = np.random.default_rng(SEED)
    df = simulate(rng, N_CLEAN + N_INCOMPLETE)
    small = np.zeros(len(df), dtype=int)
    small[rng.choice(N_CLEAN, size=N_TREATED, replace=False)] = 1
    small[N_CLEAN:] = rng.random(N_INCOMPLETE) < N_TREATED / N_CLEAN
    df.insert(0, "small", small)
    df.insert(1, "score", np.round(df.pop("base") + EFFECT * small + rng.normal(0.0, 3.0, len(df)), 1))
    df = df.astype({"score": object, "birth": object, "gender": object, "lunch": object})
    # blank out one cell in each incomplete row
    cols = rng.choice(["score", "gender", "race", "birth", "lunch", "school"], size=N_INCOMPLETE)
    for i, col in zip(range(N_CLEAN, len(df)), cols):
        df.at[i, col] = ""
    df = df.iloc[rng.permutation(len(df))].reset_index(drop=True)
    df.to_csv(out, index=False)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/unconfound/data/star_standin.csv")
