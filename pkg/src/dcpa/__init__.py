"""dcpa: data-center thermal digital twin.

Coarse-grid airflow/temperature ground truth, a linear-attention neural
operator surrogate trained on it, and a what-if HTTP service on top.
"""

__version__ = "0.1.0"
