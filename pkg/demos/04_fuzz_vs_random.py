"""Coverage-guided fuzzing against a random-acceptance baseline.

Both runs share the seed pool, mutation operators, validity rules, and
iteration budget; only the acceptance predicate differs. The coverage
gate keeps a mutant exactly when it lands in an unsaturated grid cell,
the baseline keeps valid mutants by a coin flip matched to the coverage
run's acceptance rate (so suite sizes stay comparable).
"""

from codofuzz import FuzzConfig, build_seed_set, compute_metrics, load_dataset, rng_streams, run_fuzz
from codofuzz.dataio import save_suite
from codofuzz.desk import make_blobs_source, make_desk_model

SEED = 1
model = make_desk_model()
source = make_blobs_source()


def fresh_pool():
    return build_seed_set(
        load_dataset(source), model, per_class=20, rng=rng_streams(SEED)["seed_selection"]
    )


base = dict(n_bins=10, cap=10, max_iterations=2000, rng_seed=SEED, allow_hflip=False)

print("running the coverage-guided loop...")
suite_cdc, report_cdc = run_fuzz(FuzzConfig(**base, acceptance="cdc"), fresh_pool(), model)
matched_rate = report_cdc.accepted / report_cdc.iterations

print(f"running the random baseline at matched rate {matched_rate:.3f}...")
suite_rnd, report_rnd = run_fuzz(
    FuzzConfig(**base, acceptance="random", random_accept_prob=matched_rate),
    fresh_pool(),
    model,
)

rows = [
    ("suite size", len(suite_cdc), len(suite_rnd)),
    ("final cdc", f"{report_cdc.final_cdc:.3f}", f"{report_rnd.final_cdc:.3f}"),
]
m_cdc = compute_metrics(suite_cdc, model.n_classes)
m_rnd = compute_metrics(suite_rnd, model.n_classes)
rows += [
    ("misclassified", m_cdc.n_misclassified, m_rnd.n_misclassified),
    ("avg entropy (nats)", f"{m_cdc.avg_entropy:.3f}", f"{m_rnd.avg_entropy:.3f}"),
    ("output impartiality", f"{m_cdc.output_impartiality:.3f}", f"{m_rnd.output_impartiality:.3f}"),
    ("distinct classes", m_cdc.distinct_classes, m_rnd.distinct_classes),
    ("distinct error types", m_cdc.distinct_error_types, m_rnd.distinct_error_types),
]
print(f"\n{'metric':>22} | {'coverage-guided':>16} | {'random':>8}")
for name, a, b in rows:
    print(f"{name:>22} | {a!s:>16} | {b!s:>8}")

save_suite(suite_cdc, "demos/out/suite_cdc", report_cdc)
save_suite(suite_rnd, "demos/out/suite_random", report_rnd)
print("\nsuites saved under demos/out/; inspect them with `codofuzz evaluate`.")
