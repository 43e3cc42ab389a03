"""Experiment runner driving simulation, training, evaluation, allocation and reporting."""
import dataclasses
import glob
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.allocator import allocate_window, gain_summary, read_gain_reports, write_gain_reports
from src.artifacts import replace_on_success
from src.config import ExperimentConfig, worker_count
from src.consumer import ConsumerSpec, sample_consumer
from src.errors import MissingArtifactError, TariffToolkitError, UsageError
from src.features import (
    ForecastWindow,
    Normalization,
    counterfactual_window,
    featurize,
    fit_normalization,
    split_bounds,
)
from src.forecaster import Forecaster, assemble_model, load_checkpoint, parse_variant, save_checkpoint
from src.layers import ModelVariant
from src.market_sim import (
    SimDataset,
    bias_report,
    consumer_average_profiles,
    consumer_noise_seeds,
    curate_profiles_in,
    high_rate_spread,
    read_dataset,
    sample_profiles_out,
    simulate,
    write_dataset,
)
from src.seeding import derive_seed
from src.tariff import FLOAT_FORMAT, TariffProfile, WholesaleOption, read_profiles, write_profiles
from src.training import evaluate_aql, train

logger = logging.getLogger(__name__)

# "seed" is the replicate index: model init and batch order vary, the simulated data does not.
AQL_COLUMNS = ["t_in_size", "variant", "scenario", "seed", "aql"]
LOSS_COLUMNS = ["epoch", "train_loss", "val_aql"]
SAMPLE_METHODS = ("FC", "Att", "AttNoHOD", "AttPE")
ORACLE = "oracle"


class RunLayout:
    """File locations of one experiment under its output directory."""

    def __init__(self, root: str) -> None:
        self.root = root

    def _path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    def t_out_profiles(self) -> str:
        return self._path("profiles", "t_out.csv")

    def t_in_profiles(self, k: int) -> str:
        return self._path("profiles", f"tin_{k}.csv")

    def dataset_dir(self, k: int) -> str:
        return self._path("data", f"tin_{k}")

    def bias_report(self, k: int) -> str:
        return self._path("data", f"tin_{k}", "bias_report.csv")

    def checkpoint(self, k: int, variant: str, replicate: int) -> str:
        return self._path("models", f"tin_{k}", f"{variant}_seed{replicate}.json")

    def loss_history(self, k: int, variant: str, replicate: int) -> str:
        return self._path("models", f"tin_{k}", f"{variant}_seed{replicate}_loss.csv")

    def aql_results(self, k: int, replicate: int) -> str:
        return self._path("results", f"tin_{k}", f"aql_seed{replicate}.csv")

    def gain_results(self, k: int, replicate: int) -> str:
        return self._path("results", f"tin_{k}", f"gains_seed{replicate}.csv")

    def gain_summary(self, k: int, replicate: int) -> str:
        return self._path("results", f"tin_{k}", f"gain_summary_seed{replicate}.csv")

    def report(self, name: str) -> str:
        return self._path(name)


@dataclass
class SplitWindows:
    """Featurized train, validation and test windows of one dataset."""
    train: List[ForecastWindow]
    val: List[ForecastWindow]
    test: List[ForecastWindow]
    normalization: Normalization


def _write_csv(frame: pd.DataFrame, path: str, index: bool = False) -> None:
    with replace_on_success(path) as temporary:
        frame.to_csv(temporary, index=index, float_format=FLOAT_FORMAT)


class ExperimentRunner:
    """Runs the experiment phases for one configuration.

    Every phase reads its inputs from and writes its outputs to the run
    layout, so phases can run in separate processes and resume after an
    interruption.

    Attributes:
        config: The experiment configuration.
        layout: File locations under ``config.output_dir``.
        failures: ``(cell, message)`` pairs of failed or skipped work.
    """

    def __init__(self, config: ExperimentConfig) -> None:
        """Initialize the runner.

        Args:
            config: Validated experiment configuration.
        """
        self.config = config
        self.layout = RunLayout(config.output_dir)
        self.failures: List[Tuple[str, str]] = []

        # Loaded lazily, once per process
        self._datasets: Dict[int, SimDataset] = {}
        self._splits: Dict[int, SplitWindows] = {}
        self._t_out: Optional[List[TariffProfile]] = None

    # Simulation

    def sample_consumers(self) -> List[ConsumerSpec]:
        return [
            sample_consumer(self.config.ranges, derive_seed(self.config.seed, "consumer", i), f"c{i:02d}")
            for i in range(self.config.n_consumers)
        ]

    def wholesale_options(self) -> List[WholesaleOption]:
        seed = self.config.wholesale_seed
        if seed is None:
            return [WholesaleOption.default(tag) for tag in self.config.wholesale_options]
        return [WholesaleOption.sample(tag, derive_seed(seed, "wholesale", tag)) for tag in self.config.wholesale_options]

    def cmd_simulate(self) -> List[str]:
        """Generate profile sets and one dataset per historical set size.

        Returns:
            Directories of the written datasets.
        """
        config = self.config
        config.validate()
        consumers = self.sample_consumers()
        sim_seed = derive_seed(config.seed, "simulate")
        averages = consumer_average_profiles(consumers, consumer_noise_seeds(consumers, sim_seed))
        wholesale = self.wholesale_options()

        t_in_sets = {k: curate_profiles_in(averages, k, derive_seed(config.seed, "t_in", k)) for k in config.t_in_sizes}
        seen = [profile for profiles in t_in_sets.values() for profile in profiles]
        t_out = sample_profiles_out(config.t_out_size, derive_seed(config.seed, "t_out"), exclude=seen)
        if not t_out:
            logger.warning("t_out_size is 0: OOD evaluation is disabled")
        os.makedirs(os.path.dirname(self.layout.t_out_profiles()), exist_ok=True)
        write_profiles(t_out, self.layout.t_out_profiles())

        written = []
        for k, profiles in t_in_sets.items():
            write_profiles(profiles, self.layout.t_in_profiles(k))
            dataset = simulate(consumers, profiles, config.months, sim_seed, wholesale)
            write_dataset(dataset, self.layout.dataset_dir(k))
            report = bias_report(dataset)
            _write_csv(report, self.layout.bias_report(k), index=True)
            logger.info("T_in=%d: dataset written, high-rate spread across hours %.3g", k, high_rate_spread(report))
            self._datasets[k] = dataset
            written.append(self.layout.dataset_dir(k))
        self._splits.clear()
        self._t_out = t_out
        return written

    def load_dataset(self, k: int) -> SimDataset:
        if k not in self._datasets:
            self._datasets[k] = read_dataset(self.layout.dataset_dir(k))
        return self._datasets[k]

    def load_t_out(self) -> List[TariffProfile]:
        if self._t_out is None:
            path = self.layout.t_out_profiles()
            if not os.path.exists(path):
                raise MissingArtifactError("out-of-distribution profiles", path)
            self._t_out = read_profiles(path)
        return self._t_out

    def split_windows(self, k: int) -> SplitWindows:
        """Featurize the dataset of size ``k``; shift indicators are attached when available."""
        if k not in self._splits:
            dataset = self.load_dataset(k)
            bounds = split_bounds(self.config.split_months)
            normalization = fit_normalization(dataset, bounds["train"])
            shift = dataset.has_day_details
            self._splits[k] = SplitWindows(
                train=featurize(dataset, bounds["train"], normalization, with_shift_indicator=shift),
                val=featurize(dataset, bounds["val"], normalization, with_shift_indicator=shift),
                test=featurize(dataset, bounds["test"], normalization, with_shift_indicator=shift),
                normalization=normalization,
            )
        return self._splits[k]

    def ood_windows(self, k: int, windows: Sequence[ForecastWindow]) -> List[ForecastWindow]:
        """Every window re-offered each T_out profile, with simulator targets."""
        dataset = self.load_dataset(k)
        return [
            counterfactual_window(window, profile, dataset.consumer(window.consumer_id),
                                  dataset.noise_seeds[window.consumer_id])
            for window in windows
            for profile in self.load_t_out()
        ]

    # Training

    def cmd_train(self, k: int, variant: str, replicate: int = 0) -> str:
        """Train one variant on the size-``k`` dataset and write its checkpoint.

        Returns:
            Path of the checkpoint.

        Raises:
            MissingArtifactError: If the dataset has not been simulated.
            UsageError: If UB is requested without shift indicators.
        """
        config = self.config
        variant = variant if isinstance(variant, ModelVariant) else parse_variant(variant)
        dataset = self.load_dataset(k)
        if variant.needs_shift_indicator and not dataset.has_day_details:
            raise UsageError(f"UB needs shift indicators; {self.layout.dataset_dir(k)} has no day table")
        splits = self.split_windows(k)

        model = assemble_model(variant, config.dims, derive_seed(config.seed, "model", k, variant.value, replicate))
        model.normalization = dict(splits.normalization)
        training = dataclasses.replace(config.training,
                                       seed=derive_seed(config.seed, "train", k, variant.value, replicate))
        train(model, splits.train, training, splits.val, show_progress=config.show_progress)

        history = pd.DataFrame([dataclasses.asdict(record) for record in model.history], columns=LOSS_COLUMNS)
        _write_csv(history, self.layout.loss_history(k, variant.value, replicate))
        # Written last: sweeps treat a readable checkpoint as a finished cell
        path = self.layout.checkpoint(k, variant.value, replicate)
        save_checkpoint(model, path)
        logger.info("Saved %s (T_in=%d, seed %d) to %s", variant.value, k, replicate, path)
        return path

    def load_models(self, k: int, replicate: int) -> Dict[str, Forecaster]:
        """Checkpoints of every configured variant; missing ones are recorded as failures."""
        models: Dict[str, Forecaster] = {}
        for variant in self.config.model_variants:
            try:
                models[variant.value] = load_checkpoint(self.layout.checkpoint(k, variant.value, replicate))
            except TariffToolkitError as error:
                logger.error("Skipping %s for T_in=%d, seed %d: %s", variant.value, k, replicate, error)
                self.failures.append((f"tin={k} variant={variant.value} seed={replicate}", str(error)))
        return models

    # Evaluation

    def cmd_evaluate(self, k: int, replicate: int = 0,
                     models: Optional[Dict[str, Forecaster]] = None) -> pd.DataFrame:
        """AQL of every model on the IID test windows and their OOD counterfactuals.

        Args:
            k: Historical profile set size.
            replicate: Model seed index.
            models: Forecasters by method tag; loaded from checkpoints when omitted.

        Returns:
            One row per method and scenario. The rows are written to disk only
            when no checkpoint was missing.
        """
        complete = models is not None
        if models is None:
            before = len(self.failures)
            models = self.load_models(k, replicate)
            complete = len(self.failures) == before
        test = self.split_windows(k).test
        ood = self.ood_windows(k, test) if self.load_t_out() else []

        rows = []
        for tag, model in models.items():
            rows.append({"t_in_size": k, "variant": tag, "scenario": "IID", "seed": replicate,
                         "aql": evaluate_aql(model, test)})
            if ood:
                rows.append({"t_in_size": k, "variant": tag, "scenario": "OOD", "seed": replicate,
                             "aql": evaluate_aql(model, ood)})
            logger.info("T_in=%d seed %d %s: AQL %s", k, replicate, tag,
                        ", ".join(f"{row['scenario']} {row['aql']:.4f}" for row in rows[-(2 if ood else 1):]))
        frame = pd.DataFrame(rows, columns=AQL_COLUMNS)
        if complete:
            _write_csv(frame, self.layout.aql_results(k, replicate))
        return frame

    # Allocation

    def cmd_allocate(self, k: int, replicate: int = 0,
                     models: Optional[Dict[str, Forecaster]] = None) -> pd.DataFrame:
        """Allocate every test day with each method plus the oracle and total the gains.

        Returns:
            Total realized gain and percent gain over FC per method, scenario
            and wholesale option.
        """
        complete = models is not None
        if models is None:
            before = len(self.failures)
            models = self.load_models(k, replicate)
            complete = len(self.failures) == before
        dataset = self.load_dataset(k)
        test = self.split_windows(k).test
        options = [option for option in dataset.wholesale if option.tag in self.config.wholesale_options]
        t_in, t_out = list(dataset.profiles), self.load_t_out()
        scenarios = [("IID", t_in)] + ([("OOD", t_in + t_out)] if t_out else [])

        methods: List[Tuple[str, Optional[Forecaster]]] = list(models.items()) + [(ORACLE, None)]
        reports = []
        for tag, model in methods:
            for scenario, candidates in scenarios:
                for window in tqdm(test, desc=f"{tag}/{scenario}", disable=not self.config.show_progress):
                    reports.extend(allocate_window(
                        window, candidates, model, tag, scenario, options,
                        dataset.consumer(window.consumer_id), dataset.noise_seeds[window.consumer_id]))

        gains_path = self.layout.gain_results(k, replicate)
        os.makedirs(os.path.dirname(gains_path), exist_ok=True)
        write_gain_reports(reports, gains_path)
        summary = gain_summary(read_gain_reports(gains_path))
        summary.insert(0, "seed", replicate)
        summary.insert(0, "t_in_size", k)
        if complete:
            _write_csv(summary, self.layout.gain_summary(k, replicate))
        for row in summary.itertuples(index=False):
            logger.info("T_in=%d seed %d %s %s %s: total gain %.6g, vs FC %s%%", k, replicate, row.scenario,
                        row.wholesale_option, row.method, row.total_realized_gain, row.pct_gain_vs_fc)
        return summary

    # Sweep

    def cmd_sweep(self) -> int:
        """Run every phase for every size and replicate, skipping finished cells.

        Returns:
            Number of failed cells.
        """
        config = self.config
        config.validate()
        # The bias report is the last file a simulation writes for each size
        if not all(os.path.exists(self.layout.bias_report(k)) for k in config.t_in_sizes):
            self.cmd_simulate()
        else:
            logger.info("Datasets present, skipping simulation")

        train_cells = [
            (k, variant.value, replicate)
            for k in config.t_in_sizes for variant in config.model_variants for replicate in range(config.replicates)
        ]
        pending = [cell for cell in train_cells if not self._has_checkpoint(*cell)]
        logger.info("Training %d cells (%d already done)", len(pending), len(train_cells) - len(pending))
        self._run_cells("train", pending)

        eval_cells = [(k, replicate) for k in config.t_in_sizes for replicate in range(config.replicates)]
        retrained = {(k, replicate) for k, _, replicate in pending}
        pending = [
            cell for cell in eval_cells
            if cell in retrained
            or not (os.path.exists(self.layout.aql_results(*cell)) and os.path.exists(self.layout.gain_summary(*cell)))
        ]
        logger.info("Evaluating %d cells (%d already done)", len(pending), len(eval_cells) - len(pending))
        self._run_cells("evaluate", pending)

        try:
            self.cmd_report()
        except TariffToolkitError as error:
            logger.error("No report: %s", error)
            self.failures.append(("report", str(error)))
        self.failures = sorted(set(self.failures))
        _write_csv(pd.DataFrame(self.failures, columns=["cell", "message"]), self.layout.report("failures.csv"))
        return len(self.failures)

    def _has_checkpoint(self, k: int, variant: str, replicate: int) -> bool:
        path = self.layout.checkpoint(k, variant, replicate)
        if not os.path.exists(path):
            return False
        try:
            load_checkpoint(path)
        except TariffToolkitError as error:
            logger.warning("Retraining %s: %s", path, error)
            return False
        return True

    def _run_cells(self, stage: str, cells: Sequence[tuple]) -> None:
        workers = worker_count()
        if workers == 1 or len(cells) <= 1:
            for cell in tqdm(cells, desc=stage, disable=not self.config.show_progress):
                self.failures.extend(_run_cell(self.config, stage, cell))
            return
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_cell, self.config, stage, cell): cell for cell in cells}
            for future in as_completed(futures):
                try:
                    self.failures.extend(future.result())
                except Exception as error:
                    name = _cell_name(stage, futures[future])
                    logger.error("Worker for cell '%s' died: %s", name, error)
                    self.failures.append((name, f"{type(error).__name__}: {error}"))

    # Reporting

    def _collect(self, pattern: str) -> pd.DataFrame:
        paths = sorted(glob.glob(os.path.join(self.layout.root, "results", "tin_*", pattern)))
        frames = [pd.read_csv(path, float_precision="round_trip") for path in paths]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

    def cmd_report(self) -> Dict[str, pd.DataFrame]:
        """Aggregate per-cell results into plot-ready tables.

        Returns:
            The written tables by file name.

        Raises:
            MissingArtifactError: If no evaluation results exist yet.
        """
        aql = self._collect("aql_seed*.csv")
        if aql.empty:
            raise MissingArtifactError("evaluation results", os.path.join(self.layout.root, "results"))
        gains = self._collect("gain_summary_seed*.csv")
        keys = ["t_in_size", "variant", "scenario"]

        aql_vs_tin = (aql.groupby(keys, sort=True)["aql"].agg(["mean", "std", "count"]).reset_index()
                      .rename(columns={"mean": "aql_mean", "std": "aql_std", "count": "seeds"}))
        tables = {
            "results.csv": self._results_table(aql, gains),
            "aql_vs_tin.csv": aql_vs_tin,
        }
        if not gains.empty:
            tables["gain_vs_tin.csv"] = (
                gains.groupby(["t_in_size", "method", "scenario", "wholesale_option"], sort=True)
                .agg(total_gain_mean=("total_realized_gain", "mean"), pct_gain_vs_fc_mean=("pct_gain_vs_fc", "mean"))
                .reset_index())
        tables["trend_checks.csv"] = trend_checks(aql_vs_tin, tables.get("gain_vs_tin.csv"))
        tables["forecast_samples.csv"] = self.forecast_samples()
        for name, frame in tables.items():
            _write_csv(frame, self.layout.report(name))
        return tables

    def _results_table(self, aql: pd.DataFrame, gains: pd.DataFrame) -> pd.DataFrame:
        """One row per size, variant, scenario and seed with AQL and gains per option."""
        table = aql.copy()
        if gains.empty:
            return table
        for option in self.config.wholesale_options:
            per_option = gains[gains["wholesale_option"] == option].rename(columns={
                "method": "variant",
                "total_realized_gain": f"gain_{option}",
                "pct_gain_vs_fc": f"pct_gain_vs_fc_{option}",
            })
            table = table.merge(
                per_option[["t_in_size", "variant", "scenario", "seed", f"gain_{option}", f"pct_gain_vs_fc_{option}"]],
                on=["t_in_size", "variant", "scenario", "seed"], how="left")
        return table.sort_values(["t_in_size", "variant", "scenario", "seed"]).reset_index(drop=True)

    def forecast_samples(self) -> pd.DataFrame:
        """Ground truth and median forecasts on one IID and one OOD test day."""
        columns = ["scenario", "t_in_size", "consumer_id", "day_index", "profile_id", "hour", "ground_truth"]
        methods = [tag for tag in SAMPLE_METHODS if tag in self.config.variants]
        for k in self.config.t_in_sizes:
            paths = {tag: self.layout.checkpoint(k, tag, 0) for tag in methods}
            if not methods or not all(os.path.exists(path) for path in paths.values()):
                continue
            window = self.split_windows(k).test[0]
            samples = [("IID", window)]
            t_out = self.load_t_out()
            if t_out:
                samples.append(("OOD", self.ood_windows(k, [window])[0]))
            rows = []
            forecasts = {tag: load_checkpoint(path).predict([w for _, w in samples], [0.5])[..., 0]
                         for tag, path in paths.items()}
            for index, (scenario, sample) in enumerate(samples):
                for hour in range(len(sample.target_kwh)):
                    row = {"scenario": scenario, "t_in_size": k, "consumer_id": sample.consumer_id,
                           "day_index": sample.day_index, "profile_id": sample.profile_id, "hour": hour,
                           "ground_truth": sample.target_kwh[hour]}
                    row.update({tag: forecasts[tag][index, hour] for tag in methods})
                    rows.append(row)
            return pd.DataFrame(rows, columns=columns + methods)
        logger.warning("No size has replicate-0 checkpoints for %s; forecast samples left empty", ", ".join(methods))
        return pd.DataFrame(columns=columns + methods)


def _inversions(values: Sequence[float]) -> int:
    return int(np.sum(np.diff(np.asarray(values, dtype=np.float64)) > 0))


def trend_checks(aql_vs_tin: pd.DataFrame, gain_vs_tin: Optional[pd.DataFrame]) -> pd.DataFrame:
    """Directional checks on the aggregated results.

    Checks that OOD AQL does not increase with the historical set size (one
    inversion allowed), that Att.+PE and Att.-HOD beat FC by at least 5% on
    OOD AQL, that NoX is the worst and UB the best method, and that Att.+PE
    earns more than FC.
    """
    rows = []
    ood = aql_vs_tin[aql_vs_tin["scenario"] == "OOD"]
    for variant, group in ood.groupby("variant", sort=True):
        group = group.sort_values("t_in_size")
        inversions = _inversions(group["aql_mean"])
        rows.append({"check": "ood_aql_non_increasing", "method": variant, "t_in_size": None,
                     "wholesale_option": None, "value": float(inversions), "passed": inversions <= 1})

    for k, group in ood.groupby("t_in_size", sort=True):
        means = dict(zip(group["variant"], group["aql_mean"]))
        if "FC" in means:
            for variant in ("AttPE", "AttNoHOD"):
                if variant in means:
                    margin = 1.0 - means[variant] / means["FC"]
                    rows.append({"check": "ood_aql_margin_vs_fc", "method": variant, "t_in_size": k,
                                 "wholesale_option": None, "value": margin, "passed": margin >= 0.05})
        bounded = {tag: value for tag, value in means.items() if tag != "UB"}
        if "NoX" in bounded and len(bounded) > 1:
            rows.append({"check": "nox_worst", "method": "NoX", "t_in_size": k, "wholesale_option": None,
                         "value": means["NoX"], "passed": means["NoX"] >= max(bounded.values())})
        if "UB" in means and len(means) > 1:
            rows.append({"check": "ub_best", "method": "UB", "t_in_size": k, "wholesale_option": None,
                         "value": means["UB"], "passed": means["UB"] <= min(means.values())})

    if gain_vs_tin is not None:
        attpe = gain_vs_tin[(gain_vs_tin["method"] == "AttPE") & (gain_vs_tin["scenario"] == "OOD")]
        for row in attpe.itertuples(index=False):
            value = row.pct_gain_vs_fc_mean
            rows.append({"check": "pct_gain_vs_fc_positive", "method": "AttPE", "t_in_size": row.t_in_size,
                         "wholesale_option": row.wholesale_option, "value": value,
                         "passed": bool(pd.notna(value) and value > 0)})
    return pd.DataFrame(rows, columns=["check", "method", "t_in_size", "wholesale_option", "value", "passed"])


def _cell_name(stage: str, cell: tuple) -> str:
    return f"{stage} " + " ".join(str(part) for part in cell)


def _run_cell(config: ExperimentConfig, stage: str, cell: tuple) -> List[Tuple[str, str]]:
    """Run one sweep cell in a fresh runner; returns its failures."""
    runner = ExperimentRunner(config)
    name = _cell_name(stage, cell)
    try:
        if stage == "train":
            runner.cmd_train(*cell)
        else:
            runner.cmd_evaluate(*cell)
            runner.cmd_allocate(*cell)
    except TariffToolkitError as error:
        logger.error("Cell '%s' failed: %s", name, error)
        return runner.failures + [(name, str(error))]
    except Exception as error:
        logger.exception("Cell '%s' crashed", name)
        return runner.failures + [(name, f"{type(error).__name__}: {error}")]
    return runner.failures
