"""Manual runner for the desk-scale figure recipes.

Not a pytest module. Each recipe shells out to the CLI exactly as a user would,
writes its CSV under the output directory and reports the exit code, so a
broken recipe shows up as a nonzero status rather than a failed assertion.

    python scripts/reproduce_figures.py [output-dir]
"""

import os
import subprocess
import sys

APP_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CLI = os.path.join(APP_DIR, "cli.py")

THREE_ATOMS = "atoms:1/3:1,1/3:2,1/3:3"
TWO_ATOMS = "atoms:1/2:1,1/2:2"

# (file name, argv after the program name)
RECIPES = [
    (
        "three_atoms_gamma_theory.csv",
        ["sweep", "--mu-a", THREE_ATOMS, "--mu-b", TWO_ATOMS, "--sigma", "0.2", "--alpha", "0.7",
         "--lambda", "0.03", "--axis", "gamma", "--start", "0.05", "--stop", "4", "--steps", "80"],
    ),
    (
        "three_atoms_gamma_simulation.csv",
        ["simulate", "--a-model", "diag:1,2,3", "--b-model", "diag:1,2", "--sigma", "0.2", "--alpha", "0.7",
         "--lambda", "0.03", "--axis", "gamma", "--start", "0.5", "--stop", "4", "--steps", "8",
         "--n", "400", "--trials", "20", "--seed", "2019"],
    ),
    (
        "three_atoms_track_gamma_theory.csv",
        ["sweep", "--mu-a", THREE_ATOMS, "--mu-b", TWO_ATOMS, "--sigma", "0.2", "--alpha", "0.7",
         "--lambda", "track-gamma", "--axis", "gamma", "--start", "0.05", "--stop", "4", "--steps", "80"],
    ),
    (
        "redundancy_omega_optimal.csv",
        ["sweep", "--gamma", "2", "--lambda", "optimal", "--axis", "omega", "--start", "0.1", "--stop", "1",
         "--steps", "10"],
    ),
    (
        "identity_lambda.csv",
        ["sweep", "--gamma", "0.2", "--mu-a", "identity", "--mu-b", "identity", "--axis", "lambda",
         "--start", "0.01", "--stop", "2", "--steps", "200", "--spacing", "log"],
    ),
] + [
    (
        f"redundancy_{omega}_gamma.csv",
        ["sweep", "--a-model", f"redundancy:{omega}", "--lambda", "0.05", "--axis", "gamma",
         "--start", "0.05", "--stop", "3", "--steps", "60"],
    )
    for omega in ("0.2", "0.5", "0.8")
]  # fmt: skip


def run_recipe(name, argv, out_dir):
    path = os.path.join(out_dir, name)
    command = [sys.executable, CLI, *argv, "--output", path]
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode == 0:
        with open(path, "r", encoding="utf-8") as f:
            rows = sum(1 for _ in f) - 1
        print(f"  wrote {rows} rows to {path}")
    else:
        print(f"  exit {result.returncode}: {result.stderr.strip()}")
    return result.returncode == 0


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(APP_DIR, "figures")
    os.makedirs(out_dir, exist_ok=True)

    print("Reproducing figure recipes")
    print("=" * 40)

    results = []
    for i, (name, argv) in enumerate(RECIPES, start=1):
        print(f"\n{i}. {argv[0]} -> {name}")
        results.append(run_recipe(name, argv, out_dir))

    print("\n" + "=" * 40)
    print(f"{sum(results)}/{len(results)} recipes succeeded")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
