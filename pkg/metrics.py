"""
Run metrics for DG-MORL as an append-only JSON-lines file.

Design philosophy:
- One record per line, flushed as it is written
- Fixed key order per record type, no timestamps (identical runs give
  byte-identical files)
- Floats written with Python's shortest round-trip repr, so values read
  back exactly
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

METRICS_FILENAME = 'metrics.jsonl'

EVENT_EVAL = 'eval'
EVENT_ROUND = 'round'
EVENT_SUMMARY = 'summary'

# Field order of the evaluation record
EVAL_FIELDS = (
    'global_step', 'eval_step', 'env_steps', 'eu', 'ccs_size', 'active_demos',
    'w_c', 'h_final', 'beta', 'round',
)


class MetricsError(RuntimeError):
    pass


class MetricsLog:
    """
    Append-only record list, optionally mirrored to a file.

    Without a path the log is in-memory only (tests, quick runs).
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._records: List[Dict[str, Any]] = []
        if path:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            # Truncate: a run owns its file
            with open(path, 'w'):
                pass

    def __len__(self):
        return len(self._records)

    def log_event(self, event_type: str, metadata: Dict[str, Any]) -> Dict[str, Any]:
        """
        Append one record.

        Example:
            log.log_event('eval', {'global_step': 4000, 'eu': 5.1, ...})
        """
        record = {'type': event_type}
        record.update(metadata)
        line = json.dumps(record, allow_nan=False)
        self._records.append(record)
        if self.path:
            with open(self.path, 'a') as f:
                f.write(line + '\n')
        if event_type == EVENT_EVAL:
            logger.info(f"[METRICS] step {record.get('global_step')}: EU={record.get('eu'):.6g} "
                        f"ccs={record.get('ccs_size')} active={record.get('active_demos')}")
        return record

    def get_events(self, event_type: Optional[str] = None) -> List[Dict[str, Any]]:
        if event_type is None:
            return list(self._records)
        return [r for r in self._records if r['type'] == event_type]

    def get_summary(self) -> Optional[Dict[str, Any]]:
        summaries = self.get_events(EVENT_SUMMARY)
        return summaries[-1] if summaries else None


def eval_record(**fields) -> Dict[str, Any]:
    """Evaluation record with the fields in EVAL_FIELDS order"""
    missing = [k for k in EVAL_FIELDS if k not in fields]
    if missing:
        raise MetricsError(f"Evaluation record missing fields: {missing}")
    return {k: fields[k] for k in EVAL_FIELDS}


def read_metrics(path: str) -> List[Dict[str, Any]]:
    """Load every record of a metrics file"""
    records = []
    try:
        with open(path, 'r') as f:
            for line_number, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise MetricsError(f"{path}:{line_number}: bad metrics record: {e}")
    except OSError as e:
        raise MetricsError(f"Cannot read metrics file {path}: {e}")
    return records
