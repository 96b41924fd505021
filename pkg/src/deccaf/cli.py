"""Command-line interface.

Verbs: gen-data, train-alert, gen-experts, train-deccaf, train-ova, assign,
evaluate, run-all. Exit codes: 0 ok, 2 configuration error, 3 infeasible
capacities, 4 degenerate training data.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from .alert_model import AlertModel, filter_alerts, train_alert_model
from .assigner import run_deferral
from .baselines import (
    OvaModel,
    full_rejection,
    only_classifier,
    ova_assign,
    random_assign,
    train_ova_heads,
)
from .data_model import (
    MODE_EQUALITY,
    MODE_UPPER,
    CapacitySpec,
    CostStructure,
    Dataset,
    ExpertRecords,
    require_feasible,
    weights_for,
)
from .errors import ConfigError, DegenerateTrainingError, InfeasibleCapacityError
from .expert_sim import (
    PreprocessSpec,
    TeamSpec,
    complementarity_counts,
    error_probabilities,
    expected_cost,
    generate_team,
    load_team,
    sample_decisions,
    save_team,
)
from .harness import RunConfig, SyntheticDataSpec, derive_seed, generate_synthetic, run_all
from .hem import HemModel, build_hem_rows, train_hem
from .metrics import cost_per_100, summarize
from .scorer import Scorer, TrainConfig, select_scorer

DEFAULT_TRAIN_MONTHS = (4, 5, 6)
DEFAULT_VAL_MONTH = 7
DEFAULT_TEST_MONTH = 8


def _months(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _cols(text: str) -> list:
    return [int(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# shared pieces


def _deployment_alerts(data: Dataset, alert: AlertModel, train_months, val_month, test_month):
    months = list(train_months) + [val_month, test_month]
    window = data.subset(np.isin(data.batches, months))
    alerts = filter_alerts(alert, window)
    scores = alert.scores(alerts)
    return alerts, scores


def _fit_preprocess(alerts: Dataset, train_months, categorical_cols, protected_col):
    train_mask = np.isin(alerts.batches, list(train_months))
    numeric_cols = [c for c in range(alerts.feature_dim) if c not in categorical_cols]
    return PreprocessSpec.fit(
        alerts.features[train_mask],
        alerts.labels[train_mask],
        numeric_cols,
        categorical_cols,
        protected_col,
    )


def _train_classifier(alerts: Dataset, lam: float, train_months, val_month, args) -> Scorer:
    cost = CostStructure(lam)
    tr = alerts.subset(np.isin(alerts.batches, list(train_months)))
    va = alerts.subset(alerts.batches == val_month)
    if len(tr) == 0 or len(va) == 0:
        raise DegenerateTrainingError("empty train or validation alert split")
    offsets = (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)
    return select_scorer(
        tr.features, tr.labels, weights_for(tr.labels, cost),
        va.features, va.labels, weights_for(va.labels, cost),
        TrainConfig(max_iterations=args.rounds, seed=0),
        offsets=offsets,
    )


def _decision_matrix(team, seed, xbar, labels, ids, scores) -> np.ndarray:
    cols = [sample_decisions(p, xbar, labels, ids, scores, seed) for p in team]
    return np.column_stack(cols)


def _load_capacity_spec(path, data: Dataset) -> CapacitySpec:
    try:
        with open(path) as fh:
            blob = json.load(fh)
        mode = blob.get("mode", MODE_EQUALITY)
        capacities = np.asarray(blob["capacities"], dtype=np.int64)
        if capacities.ndim == 1:
            capacities = capacities.reshape(1, -1)
        batch_ids = blob.get("batch_ids")
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid capacities file {path}: {exc}") from exc
    if mode not in (MODE_EQUALITY, MODE_UPPER):
        raise ConfigError(f"unknown capacity mode {mode!r}")
    unique_batches = sorted(int(b) for b in np.unique(data.batches))
    if batch_ids is None:
        batch_ids = unique_batches
    if len(batch_ids) != capacities.shape[0]:
        raise ConfigError("one capacity row per batch id required")
    row_of_batch = {int(b): i for i, b in enumerate(batch_ids)}
    try:
        batch_of = {int(i): row_of_batch[int(b)] for i, b in zip(data.ids, data.batches)}
    except KeyError as exc:
        raise ConfigError(f"data contains batch {exc} missing from capacities") from exc
    return CapacitySpec(batch_of, capacities, mode)


def _write_assignments(path, ids, decision_makers, predictions) -> None:
    with open(path, "w") as fh:
        fh.write("instance_id,decision_maker,prediction\n")
        for iid, dm, pr in zip(ids, decision_makers, predictions):
            fh.write(f"{int(iid)},{int(dm)},{int(pr)}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    spec = SyntheticDataSpec(
        n_instances=args.n,
        n_months=args.months,
        prevalence_target=args.prevalence,
        drift=args.drift,
    )
    dataset, true_p = generate_synthetic(spec, args.seed)
    dataset.to_csv(args.out)
    if args.truth_out:
        with open(args.truth_out, "w") as fh:
            fh.write("id,true_probability\n")
            for iid, p in zip(dataset.ids, true_p):
                fh.write(f"{int(iid)},{p!r}\n")
    print(json.dumps({"rows": len(dataset), "prevalence": float(dataset.labels.mean())}))
    return 0


def cmd_train_alert(args) -> int:
    data = Dataset.from_csv(args.data)
    model = train_alert_model(
        data,
        args.target_fpr,
        TrainConfig(max_iterations=args.rounds, seed=0),
        args.train_months,
        args.val_month,
    )
    model.save(args.out)
    print(json.dumps(model.summary(), sort_keys=True))
    return 0


def cmd_gen_experts(args) -> int:
    data = Dataset.from_csv(args.data)
    alert = AlertModel.load(args.model)
    lam = args.lam
    alerts, scores = _deployment_alerts(
        data, alert, args.train_months, args.val_month, args.test_month
    )
    pre = _fit_preprocess(alerts, args.train_months, args.categorical_cols, args.protected_col)
    xbar = pre.transform(alerts.features)
    classifier = _train_classifier(alerts, lam, args.train_months, args.val_month, args)
    val_mask = alerts.batches == args.val_month
    val = alerts.subset(val_mask)
    h_cost = cost_per_100(classifier.predict_class(val.features), val.labels, lam) / 100.0
    team = generate_team(
        TeamSpec(n_experts=args.n_experts, seed=args.seed),
        xbar[val_mask], val.labels, scores[val_mask],
        lam, h_cost, args.protected_col,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_team(out / "team.json", team, args.seed, lam, args.protected_col)
    with open(out / "preprocess.json", "w") as fh:
        json.dump(pre.to_json(), fh, sort_keys=True)

    decisions = _decision_matrix(team, args.seed, xbar, alerts.labels, alerts.ids, scores)
    hist_mask = np.isin(alerts.batches, list(args.train_months) + [args.val_month])
    hist_rows = np.flatnonzero(hist_mask)
    rng = np.random.default_rng(derive_seed(args.seed, "routing"))
    routed = rng.integers(1, args.n_experts + 1, size=hist_rows.size)
    ExpertRecords(
        alerts.ids[hist_rows], routed, decisions[hist_rows, routed - 1]
    ).to_csv(out / "expert_predictions.csv")

    test_mask = alerts.batches == args.test_month
    test = alerts.subset(test_mask)
    test_dec = decisions[test_mask]
    report = {"experts": [], "complementarity": []}
    for k, params in enumerate(team):
        p_fp, p_fn = error_probabilities(params, xbar[test_mask], scores[test_mask])
        pred = test_dec[:, k]
        neg = test.labels == 0
        report["experts"].append(
            {
                "expert_id": params.expert_id,
                "target_cost": params.target_cost,
                "expected_cost": expected_cost(p_fp, p_fn, test.labels, lam),
                "realized_fpr": float(pred[neg].mean()) if neg.any() else float("nan"),
                "realized_fnr": float((1 - pred[~neg]).mean()) if (~neg).any() else float("nan"),
            }
        )
    for a in range(len(team)):
        report["complementarity"].append(
            [
                complementarity_counts(test_dec[:, a], test_dec[:, b], test.labels)
                for b in range(len(team))
            ]
        )
    with open(out / "team_report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    print(json.dumps({"experts": len(team), "history_records": int(hist_rows.size)}))
    return 0


def _prepare_training(args):
    data = Dataset.from_csv(args.data)
    alert = AlertModel.load(args.alert_model)
    records = ExpertRecords.from_csv(args.experts)
    alerts, scores = _deployment_alerts(
        data, alert, args.train_months, args.val_month, args.test_month
    )
    pre = _fit_preprocess(alerts, args.train_months, args.categorical_cols, args.protected_col)
    xbar = pre.transform(alerts.features)
    cost = CostStructure(args.lam)
    classifier = _train_classifier(alerts, args.lam, args.train_months, args.val_month, args)
    train_ids = set(alerts.ids[np.isin(alerts.batches, list(args.train_months))].tolist())
    val_ids = set(alerts.ids[alerts.batches == args.val_month].tolist())
    in_train = np.array([int(i) in train_ids for i in records.instance_ids])
    in_val = np.array([int(i) in val_ids for i in records.instance_ids])
    if not in_train.any() or not in_val.any():
        raise DegenerateTrainingError("expert records do not cover both train and val months")
    rows_train = build_hem_rows(alerts, records.subset(in_train), scores, cost, xbar)
    rows_val = build_hem_rows(alerts, records.subset(in_val), scores, cost, xbar)
    n_experts = int(records.expert_ids.max())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    classifier.save(out / "classifier_h.model")
    with open(out / "preprocess.json", "w") as fh:
        json.dump(pre.to_json(), fh, sort_keys=True)
    shutil.copyfile(args.alert_model, out / "alert.model")
    return rows_train, rows_val, n_experts, out


def cmd_train_deccaf(args) -> int:
    rows_train, rows_val, n_experts, out = _prepare_training(args)
    hem = train_hem(
        rows_train, rows_val, n_experts, TrainConfig(max_iterations=args.rounds, seed=0)
    )
    hem.save(out / "hem.model")
    print(json.dumps({"experts": n_experts, "rows": len(rows_train)}))
    return 0


def cmd_train_ova(args) -> int:
    rows_train, rows_val, n_experts, out = _prepare_training(args)
    heads = train_ova_heads(
        rows_train, rows_val, n_experts, TrainConfig(max_iterations=args.rounds, seed=0)
    )
    for j, head in enumerate(heads, start=1):
        head.save(out / f"ova_head_{j}.model")
    print(json.dumps({"experts": n_experts, "rows": len(rows_train)}))
    return 0


def cmd_assign(args) -> int:
    models = Path(args.models)
    data = Dataset.from_csv(args.data)
    spec = _load_capacity_spec(args.capacities, data)
    require_feasible(spec, data)
    alert = AlertModel.load(models / "alert.model")
    scores = alert.scores(data)
    with open(models / "preprocess.json") as fh:
        pre = PreprocessSpec.from_json(json.load(fh))
    xbar = pre.transform(data.features)
    team, team_seed, _, _ = load_team(models / "team.json")
    decisions = _decision_matrix(team, team_seed, xbar, data.labels, data.ids, scores)
    classifier = Scorer.load(models / "classifier_h.model")
    h_classes = classifier.predict_class(data.features)

    if args.strategy == "deccaf":
        hem = HemModel.load(models / "hem.model")
        result = run_deferral(classifier, hem, data, spec, scores, decisions, xbar)
        assignment, predictions = result.assignment, result.predictions
    elif args.strategy in ("ova", "random"):
        batch_idx = spec.batch_index_for(data)
        assignment = np.full(len(data), -1, dtype=np.int64)
        if args.strategy == "ova":
            heads = []
            j = 1
            while (models / f"ova_head_{j}.model").exists():
                heads.append(Scorer.load(models / f"ova_head_{j}.model"))
                j += 1
            if len(heads) != len(team):
                raise ConfigError("one ova head per expert required in the models dir")
            probs = OvaModel(classifier, heads).head_probabilities(data.features, scores)
            for b in np.unique(batch_idx):
                rows = np.flatnonzero(batch_idx == b)
                assignment[rows] = ova_assign(probs[rows], spec.capacities[b], spec.mode)
        else:
            rng = np.random.default_rng(args.seed)
            for b in np.unique(batch_idx):
                rows = np.flatnonzero(batch_idx == b)
                assignment[rows] = random_assign(rows.size, spec.capacities[b], rng, spec.mode)
        predictions = np.where(
            assignment == 0,
            h_classes,
            decisions[np.arange(len(data)), np.maximum(assignment, 1) - 1],
        )
    elif args.strategy == "fr":
        assignment = np.full(len(data), -1, dtype=np.int64)
        predictions = full_rejection(len(data))
    elif args.strategy == "oc":
        assignment = np.zeros(len(data), dtype=np.int64)
        predictions = only_classifier(classifier, data.features)
    else:
        raise ConfigError(f"unknown strategy {args.strategy!r}")
    _write_assignments(args.out, data.ids, assignment, predictions)
    print(json.dumps({"strategy": args.strategy, "instances": len(data)}))
    return 0


def _strategy_of(path: Path) -> str:
    stem = path.stem
    if stem.startswith("assignments_"):
        return stem.split("_")[1]
    return stem


def cmd_evaluate(args) -> int:
    data = Dataset.from_csv(args.data)
    label_of = {int(i): int(y) for i, y in zip(data.ids, data.labels)}
    per_file = []
    by_strategy: dict = {}
    for path in args.assignments:
        path = Path(path)
        ids, preds = [], []
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != ["instance_id", "decision_maker", "prediction"]:
                raise ConfigError(f"unexpected assignments header in {path}")
            for line in fh:
                iid, _, pred = line.strip().split(",")
                ids.append(int(iid))
                preds.append(int(pred))
        try:
            labels = np.array([label_of[i] for i in ids])
        except KeyError as exc:
            raise ConfigError(f"assignment references unknown instance {exc}") from exc
        cost = cost_per_100(np.array(preds), labels, args.lam)
        strategy = _strategy_of(path)
        per_file.append({"file": path.name, "strategy": strategy, "cost_per_100": cost})
        by_strategy.setdefault(strategy, []).append(cost)
    payload = {"lambda": args.lam, "per_file": per_file}
    if all(len(v) >= 2 for v in by_strategy.values()) and by_strategy:
        report = summarize(by_strategy, {"lambda": args.lam})
        payload["strategies"] = {k: v.to_json() for k, v in report.strategies.items()}
        payload["win_rates"] = report.win_rates
    with open(args.out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    if args.emit_csv:
        with open(args.emit_csv, "w") as fh:
            fh.write("file,strategy,cost_per_100\n")
            for row in per_file:
                fh.write(f"{row['file']},{row['strategy']},{row['cost_per_100']!r}\n")
    print(json.dumps({"files": len(per_file)}))
    return 0


def cmd_run_all(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    results = run_all(config, args.out)
    print(json.dumps({"scenarios": sorted(results.keys())}))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common_training_flags(p):
    p.add_argument("--train-months", type=_months, default=DEFAULT_TRAIN_MONTHS)
    p.add_argument("--val-month", type=int, default=DEFAULT_VAL_MONTH)
    p.add_argument("--test-month", type=int, default=DEFAULT_TEST_MONTH)
    p.add_argument("--categorical-cols", type=_cols, default=[])
    p.add_argument("--protected-col", type=int, default=1)
    p.add_argument("--rounds", type=int, default=60)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deccaf",
        description="Cost- and capacity-constrained deferral toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic alert-review dataset")
    p.add_argument("--n", type=int, default=200_000)
    p.add_argument("--months", type=int, default=8)
    p.add_argument("--prevalence", type=float, default=0.011)
    p.add_argument("--drift", type=float, default=0.8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-alert", help="train the alert model and pick its threshold")
    p.add_argument("--data", required=True)
    p.add_argument("--target-fpr", type=float, required=True)
    p.add_argument("--train-months", type=_months, default=(1, 2, 3))
    p.add_argument("--val-month", type=int, default=4)
    p.add_argument("--rounds", type=int, default=80)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_alert)

    p = sub.add_parser("gen-experts", help="generate a synthetic expert team")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="alert model file")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-experts", type=int, default=9)
    p.add_argument("--out", required=True)
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_gen_experts)

    p = sub.add_parser("train-deccaf", help="train the classifier and the expertise model")
    p.add_argument("--data", required=True)
    p.add_argument("--experts", required=True, help="expert predictions CSV")
    p.add_argument("--alert-model", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_train_deccaf)

    p = sub.add_parser("train-ova", help="train one-vs-all rejector heads")
    p.add_argument("--data", required=True)
    p.add_argument("--experts", required=True)
    p.add_argument("--alert-model", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_common_training_flags(p)
    p.set_defaults(func=cmd_train_ova)

    p = sub.add_parser("assign", help="solve capacity-constrained assignments")
    p.add_argument("--models", required=True, help="directory with trained model files")
    p.add_argument("--data", required=True)
    p.add_argument("--capacities", required=True, help="JSON capacity file")
    p.add_argument(
        "--strategy", default="deccaf", choices=["deccaf", "ova", "random", "fr", "oc"]
    )
    p.add_argument("--seed", type=int, default=0, help="seed for the random strategy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("evaluate", help="score assignment files against labels")
    p.add_argument("--assignments", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-csv", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-all", help="run the full synthetic scenario grid")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output root (default $DECCAF_OUTPUT_ROOT)")
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleCapacityError as exc:
        print(f"infeasible capacities: {exc}", file=sys.stderr)
        return 3
    except DegenerateTrainingError as exc:
        print(f"degenerate training data: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
