"""
Flipping nearest-anchor classifications
=======================================

Class anchors are mean embeddings of synthetic exemplars. Each original is
matched to an exemplar of another class; the perturbed copy then lands on
the other class's anchor.
"""

from embedding_atlas.pipeline import PipelineConfig, classify_experiment, validate

ctx = validate(PipelineConfig("classify"))
_, rows, anchors = classify_experiment(ctx, return_rows=True)

print("anchors:", ", ".join(anchors.labels))
for r in rows:
    mark = "ok" if r["expected"] == r["predicted"] else "MISS"
    print(f"pair {r['pair']} {r['kind']:>8}: predicted {r['predicted']:>8} "
          f"(expected {r['expected']}), mean |dpixel| {r['mean_abs_delta']:.4f}  {mark}")
