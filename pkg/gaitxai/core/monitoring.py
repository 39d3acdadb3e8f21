"""
Logging setup and run metrics for the analysis pipeline
"""

import logging
import math
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from functools import wraps
from typing import Any, Callable, Deque, Dict, List, Optional

from gaitxai.core.config import settings


class MetricType(str, Enum):
    """Types of metrics we track"""
    STAGE_DURATION = "stage_duration"
    EPOCH_LOSS = "epoch_loss"
    FOLD_ACCURACY = "fold_accuracy"
    CONSERVATION_RESIDUAL = "conservation_residual"


class AlertLevel(str, Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


@dataclass
class RunMetric:
    """Individual run metric"""
    name: MetricType
    value: float
    timestamp: float = field(default_factory=time.monotonic)
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunAlert:
    level: AlertLevel
    message: str
    metric_name: MetricType
    value: float
    threshold: float
    context: Dict[str, Any] = field(default_factory=dict)


class MetricsCollector:
    """Bounded per-type metric histories with threshold alerts"""

    def __init__(self, max_metrics_per_type: int = 10000):
        self.metrics: Dict[MetricType, Deque[RunMetric]] = defaultdict(lambda: deque(maxlen=max_metrics_per_type))
        self.alerts: List[RunAlert] = []
        self.thresholds: Dict[MetricType, Dict[AlertLevel, float]] = self._setup_default_thresholds()
        self.alert_callbacks: List[Callable[[RunAlert], None]] = []
        self.logger = logging.getLogger(__name__)
        self._lock = threading.Lock()

    def _setup_default_thresholds(self) -> Dict[MetricType, Dict[AlertLevel, float]]:
        """Upper thresholds; crossing one raises an alert"""
        return {
            MetricType.CONSERVATION_RESIDUAL: {
                AlertLevel.WARNING: settings.CONSERVATION_WARN_RELATIVE,
                AlertLevel.ERROR: 1e-2,
            },
        }

    def record_metric(self, metric_type: MetricType, value: float, **metadata) -> None:
        metric = RunMetric(name=metric_type, value=float(value), metadata=metadata)
        # Fold trainings may report from worker threads
        with self._lock:
            self.metrics[metric_type].append(metric)
        self._check_alert_conditions(metric_type, float(value), metadata)
        self.logger.debug(f"Recorded metric {metric_type.value}: {value}")

    def _check_alert_conditions(self, metric_type: MetricType, value: float, metadata: Dict[str, Any]) -> None:
        thresholds = self.thresholds.get(metric_type)
        if not thresholds:
            return
        for level in (AlertLevel.ERROR, AlertLevel.WARNING):
            threshold = thresholds.get(level)
            if threshold is not None and abs(value) > threshold:
                alert = RunAlert(
                    level=level,
                    message=f"{metric_type.value} threshold exceeded: {value:.3g} > {threshold:.3g}",
                    metric_name=metric_type,
                    value=value,
                    threshold=threshold,
                    context=metadata,
                )
                with self._lock:
                    self.alerts.append(alert)
                self._trigger_alert_callbacks(alert)
                break  # Only the highest severity

    def _trigger_alert_callbacks(self, alert: RunAlert) -> None:
        for callback in self.alert_callbacks:
            try:
                callback(alert)
            except Exception as e:
                self.logger.error(f"Alert callback failed: {e}")

    def get_metric_summary(self, metric_type: MetricType) -> Dict[str, Any]:
        with self._lock:
            values = [m.value for m in self.metrics.get(metric_type, ())]
        if not values:
            return {"count": 0}
        return {
            "count": len(values),
            "mean": math.fsum(values) / len(values),
            "min": min(values),
            "max": max(values),
            "latest": values[-1],
        }

    def summary(self, include_durations: bool = False) -> Dict[str, Any]:
        """Per-type summaries for reports.

        Only order-free statistics are kept: "latest" depends on which fold thread finished last,
        and durations are excluded unless asked for.
        """
        report = {}
        for metric_type in MetricType:
            if metric_type is MetricType.STAGE_DURATION and not include_durations:
                continue
            summary = self.get_metric_summary(metric_type)
            if summary["count"]:
                summary.pop("latest")
                report[metric_type.value] = summary
        report["alerts"] = len(self.alerts)
        return report

    def reset(self) -> None:
        with self._lock:
            self.metrics.clear()
            self.alerts.clear()


class PerformanceMonitor:
    """Decorator for timing pipeline stages"""

    def __init__(self, metrics_collector: MetricsCollector):
        self.collector = metrics_collector

    def time_function(self, stage: str, **metadata):
        def decorator(func: Callable) -> Callable:
            @wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.perf_counter()
                success = False
                try:
                    result = func(*args, **kwargs)
                    success = True
                    return result
                finally:
                    duration = time.perf_counter() - start_time
                    self.collector.record_metric(
                        MetricType.STAGE_DURATION,
                        duration,
                        stage=stage,
                        success=success,
                        function_name=func.__name__,
                        **metadata,
                    )
                    logging.getLogger(func.__module__).info(
                        f"Stage {stage} {'finished' if success else 'failed'} in {duration:.2f}s"
                    )
            return wrapper
        return decorator


def setup_logging(level: str = "info", log_file: Optional[str] = None) -> None:
    """Configure the root logger; every module logs through logging.getLogger(__name__)"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def _log_alert(alert: RunAlert) -> None:
    logger = logging.getLogger("gaitxai.alerts")
    logger.warning(f"ALERT [{alert.level.value}]: {alert.message}")


def setup_monitoring() -> "tuple[MetricsCollector, PerformanceMonitor]":
    collector = MetricsCollector()
    monitor = PerformanceMonitor(collector)
    collector.alert_callbacks.append(_log_alert)
    return collector, monitor


# Global monitoring instances
metrics_collector, performance_monitor = setup_monitoring()
