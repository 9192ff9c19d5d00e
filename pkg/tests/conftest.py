import pytest

from reportprm.corpus import ClinicalContext
from reportprm.labeling import label_corpus, synthetic_oracle
from reportprm.synthetic import SyntheticSpec, make_synthetic

# The figure-prompt example used across parsing tests.
EXAMPLE_PROMPT = (
    "Provide a description of the findings in the radiology study in comparison "
    "to the prior frontal image. INDICATION: Middle-aged man with possible pneumonia. "
    "TECHNIQUE: Anteroposterior (AP) and lateral chest radiographs. "
    "COMPARISON: Not applicable."
)


@pytest.fixture(scope="session")
def small_corpus():
    """60 synthetic studies with labels; shared by read-only tests."""
    spec = SyntheticSpec(num_studies=60, sentences_min=2, sentences_max=4, seed=7,
                         candidates_per_study=4)
    studies, generated, candidates = make_synthetic(spec)
    labels = label_corpus(studies, generated, synthetic_oracle)
    return {
        "spec": spec,
        "studies": studies,
        "generated": generated,
        "candidates": candidates,
        "labels": labels,
    }


@pytest.fixture()
def example_context():
    return ClinicalContext(
        study_id="example-0001",
        preamble="Provide a description of the findings in the radiology study "
        "in comparison to the prior frontal image.",
        indication="Middle-aged man with possible pneumonia.",
        technique="Anteroposterior (AP) and lateral chest radiographs.",
        comparison="Not applicable.",
    )
