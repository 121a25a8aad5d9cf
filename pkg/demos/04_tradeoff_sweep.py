"""End-to-end tradeoff sweep on synthetic hierarchy-correlated data.

Generates Gaussian classes whose mean vectors follow a random walk down a
27-leaf tree, then trains affine classifiers under the depth-discounted loss
at a few settings of the discount rate, on both the true taxonomy and a
label-randomized copy. Stronger discounting buys lower mistake severity at
some top-1 cost; the randomized taxonomy shows why the tree must mean
something for that trade to exist.

Runs in well under a minute; writes its tables to ./sweep_demo_out/.
"""

from pathlib import Path

from hiercls.data import dataset_to_csv, synth_hierarchical
from hiercls.fileio import write_text
from hiercls.sweep import SweepConfig, run_sweep
from hiercls.taxonomy import load_edges, prune_to_tree

edges, classes = [], []
for i in range(3):
    edges.append(("root", f"g{i}"))
    for j in range(3):
        edges.append((f"g{i}", f"g{i}{j}"))
        for k in range(3):
            edges.append((f"g{i}{j}", f"c{i}{j}{k}"))
            classes.append(f"c{i}{j}{k}")
tax = prune_to_tree(load_edges("".join(f"{a}\t{b}\n" for a, b in edges)), classes)

out = Path("sweep_demo_out")
write_text(out / "tree.tsv", tax.export_edges())
write_text(out / "classes.txt", "\n".join(tax.leaves) + "\n")
ds = synth_hierarchical(tax, per_class=300, dim=16, step_scale=1.0,
                        noise_scale=1.1, seed=7, level_decay=0.7)
write_text(out / "data.csv", dataset_to_csv(ds))
print(f"generated {ds.n} examples over {tax.num_leaves} classes")

config = SweepConfig(
    loss="hxe", grid=[0.1, 0.9], head="class",
    data=str(out / "data.csv"), taxonomy=str(out / "tree.tsv"),
    classes=str(out / "classes.txt"), taxonomy_source="both:123",
    split=(0.7, 0.15, 0.15), split_seed=0, seeds=[0, 1],
    steps=1500, batch_size=64, checkpoint_every=100, discard_before=400,
    lr=0.01, ks=(1, 5, 20), eval_split="val", workers=0,
)
failed = run_sweep(config, out / "sweep")
assert failed == 0

print("\nseed-averaged tradeoff (from sweep/tradeoff_mean.csv):")
print(f"{'taxonomy':>11} {'alpha':>6} {'top1':>8} {'severity':>9} {'avg@5':>8}")
lines = (out / "sweep" / "tradeoff_mean.csv").read_text().splitlines()
rows = [l for l in lines if l and not l.startswith("#")]
header = rows[0].split(",")
for line in rows[1:]:
    cells = dict(zip(header, line.split(",")))
    print(f"{cells['taxonomy']:>11} {cells['parameter']:>6} "
          f"{float(cells['top1_error']):>8.4f} "
          f"{float(cells['hier_dist_mistake']):>9.4f} "
          f"{float(cells['avg_hier_dist_at_5']):>8.4f}")
print("\nsame grid, same data: only the tree changed. When the taxonomy is"
      "\nrandom noise, mistakes land far from the truth no matter the loss.")
