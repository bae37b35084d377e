"""Batch processing of several run configs on a thread pool."""

import csv
import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from tqdm import tqdm

from .config import resolve_config
from .utils import ensure_dir

RESULT_KEYS = ("verdict", "final_Y", "steps")


@dataclass
class BatchJob:
    """One config source and the directory its run is written to."""

    job_id: str
    config_source: str
    output_dir: str
    scenario: Optional[str] = None
    status: str = "pending"
    config: Optional[Dict[str, Any]] = field(default=None, repr=False)
    result: Optional[Dict[str, Any]] = None
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        record.pop("config")
        return record


class BatchProcessor:
    """Run a list of scenarios, each into ``output_root/job_<k>``."""

    def __init__(self, output_root: str, max_workers: int = 2):
        self.output_root = Path(output_root)
        self.max_workers = max_workers
        self.jobs: List[BatchJob] = []

    def add_job(self, config_source: str, scenario: Optional[str] = None) -> str:
        """
        Queue a run.

        Args:
            config_source: Config path or bundled preset name
            scenario: Optional scenario name override, also the run subdirectory

        Returns:
            Job ID
        """
        job_id = f"job_{len(self.jobs) + 1}"
        self.jobs.append(
            BatchJob(job_id, config_source, str(self.output_root / job_id), scenario)
        )
        return job_id

    def load_from_csv(self, csv_path: str) -> int:
        """
        Queue one job per CSV row with a non-empty ``config`` cell.

        CSV format:
        config,scenario
        split_unstable,
        configs/custom.json,custom_a
        """
        before = len(self.jobs)
        try:
            with open(csv_path, "r", newline="") as f:
                for row in csv.DictReader(f):
                    source = (row.get("config") or "").strip()
                    if source:
                        self.add_job(source, (row.get("scenario") or "").strip() or None)
        except (OSError, csv.Error) as e:
            print(f"❌ Error loading CSV: {e}")

        loaded = len(self.jobs) - before
        print(f"📄 Loaded {loaded} jobs from {csv_path}")
        return loaded

    def _resolve(self, job: BatchJob) -> None:
        config = resolve_config(job.config_source)
        if job.scenario:
            config["scenario"] = job.scenario
        job.config = config

    def validate_jobs(self) -> Dict[str, Any]:
        """Resolve every config up front so bad jobs never start."""
        print(f"🔍 Validating {len(self.jobs)} jobs...")
        errors = []
        for job in self.jobs:
            try:
                self._resolve(job)
            except (ValueError, OSError, yaml.YAMLError) as e:
                job.status = "validation_failed"
                job.error = str(e)
                errors.append(f"{job.job_id}: {e}")

        return {"valid": len(self.jobs) - len(errors), "invalid": len(errors), "errors": errors}

    def process_single_job(self, job: BatchJob) -> Dict[str, Any]:
        """Run one validated job without progress bars; failures are recorded on the job."""
        from .cli import run_scenario

        job.status = "processing"
        try:
            report = run_scenario(job.config, job.output_dir, progress=False)
        except Exception as e:
            job.status = "failed"
            job.error = f"{type(e).__name__}: {e}"
            return {"job_id": job.job_id, "status": "error", "error": job.error}

        job.status = "completed"
        job.result = {key: report[key] for key in RESULT_KEYS}
        job.result["report"] = report["paths"]["report"]
        return {"job_id": job.job_id, "status": "success", "result": job.result}

    def _run_valid(self, jobs: List[BatchJob]) -> List[Dict[str, Any]]:
        print(f"\n🚀 Processing {len(jobs)} valid jobs with {self.max_workers} workers...")
        results = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self.process_single_job, job) for job in jobs]
            for future in tqdm(as_completed(futures), total=len(futures), desc="Batch processing"):
                results.append(future.result())
        return sorted(results, key=lambda r: r["job_id"])

    def process_all(self) -> Dict[str, Any]:
        """Validate, run every valid job and write ``batch_manifest_<stamp>.json``."""
        validation = self.validate_jobs()
        if validation["invalid"]:
            print(f"⚠️  {validation['invalid']} jobs failed validation")
            for error in validation["errors"]:
                print(f"   - {error}")

        valid = [job for job in self.jobs if job.status != "validation_failed"]
        results = self._run_valid(valid) if valid else []
        completed = sum(1 for r in results if r["status"] == "success")

        summary = {
            "total": len(self.jobs),
            "completed": completed,
            "failed": len(self.jobs) - completed,
            "validation": validation,
            "jobs": [job.to_dict() for job in self.jobs],
            "results": results,
        }

        stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        manifest_path = ensure_dir(self.output_root) / f"batch_manifest_{stamp}.json"
        with open(manifest_path, "w") as f:
            json.dump(summary, f, indent=2, default=str)

        print(f"\n✅ Batch complete: {completed} succeeded, {summary['failed']} failed")
        print(f"📄 Manifest: {manifest_path}")
        return summary
