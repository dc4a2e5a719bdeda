"""Per-step solver time against the number of free spheres.

The spheres rest on the ground without touching each other, so the work per
contact is fixed and the time growth exposes each solver's structure:
SubADMM solves one small system per sphere, PGS sweeps contacts through a
dense Delassus operator, CANAL factors one monolithic Hessian per Newton
step.
"""

from alcontact.bench import run_scaling


def main():
    result = run_scaling(counts=(8, 16, 32, 64), steps=2, seed=0)
    _, rows = result.tables["scaling"]
    print("solver   spheres  mean step time [ms]")
    for r in rows:
        print(f"{r['solver']:8s} {r['bodies']:7d}  {r['mean_time'] * 1e3:10.2f}")
    print()
    for name, slope in result.slopes.items():
        print(f"{name}: log-log slope {slope:.2f}")


if __name__ == "__main__":
    main()
