import time
from contextlib import contextmanager
from datetime import datetime
from typing import Dict, Any, Iterator


class PipelineMonitor:
    def __init__(self, config: Any = None):
        """Initialize stage monitoring with configuration"""
        self.config = config
        self.errors = []
        self.stages = []
        self.start_time = datetime.now()

    def log_error(self, error: Exception, additional_info: Dict[str, Any]) -> Dict[str, Any]:
        """Log error details"""
        error_data = {
            "timestamp": datetime.now().isoformat(),
            "error": f"{type(error).__name__}: {error}",
            "info": additional_info
        }
        self.errors.append(error_data)
        return error_data

    def log_stage(self, stage: str, duration: float, status: str) -> Dict[str, Any]:
        """Log one pipeline stage"""
        stage_data = {
            "timestamp": datetime.now().isoformat(),
            "stage": stage,
            "duration": duration,
            "status": status
        }
        self.stages.append(stage_data)
        return stage_data

    @contextmanager
    def track(self, stage: str, **info) -> Iterator[None]:
        """Time a stage; failures are recorded and re-raised"""
        start = time.perf_counter()
        try:
            yield
        except Exception as e:
            self.log_stage(stage, time.perf_counter() - start, "error")
            self.log_error(e, {"stage": stage, **info})
            raise
        self.log_stage(stage, time.perf_counter() - start, "success")

    def get_metrics(self) -> Dict[str, Any]:
        """Compute and return run metrics"""
        total = len(self.stages)
        successful = len([s for s in self.stages if s["status"] == "success"])
        return {
            "total_errors": len(self.errors),
            "total_stages": total,
            "successful_stages": successful,
            "stage_durations": {s["stage"]: s["duration"] for s in self.stages},
            "uptime_seconds": (datetime.now() - self.start_time).total_seconds()
        }
