from divdr.data.schemas import DatasetSpec, SplitReport, SynthSample  # noqa: F401
from divdr.data.generator import generate, random_flip, render, split_report  # noqa: F401
