"""Evaluation engine for fine-grained visual description corpora.

Classifies test descriptions by retrieval against a support corpus to
measure distinctiveness, and scores fidelity between originals and
text-mediated reconstructions (scaled cosine, SSIM, Fréchet distance).
Neural models never run here; embeddings and images arrive as corpus files.
"""

from .corpus import (
    CorpusError,
    CorpusManifest,
    CorpusRecord,
    ImagePairRecord,
    build_manifest,
    join_on_id,
    load_corpus,
    load_image,
    load_pair_manifest,
    make_record,
    save_corpus,
    save_pair_manifest,
    scan_corpus,
    split_view,
)
from .fidelity import (
    FeaturePopulation,
    FidelityError,
    HumanScoreSet,
    ScoredPair,
    aggregate_fidelity,
    aggregate_human_scores,
    clip_s,
    fit_population,
    frechet_distance,
    load_feature_file,
    load_human_scores,
    ssim,
)
from .icl import (
    GLOBAL_RELATIONS_TEMPLATE,
    SALIENT_FEATURES_TEMPLATE,
    PromptBundle,
    PromptTemplate,
    Shot,
    ShotSelectionSpec,
    assemble_bundle,
    render_zero_shot,
    select_shots,
)
from .textvec import TfidfVectorizer, cosine, l2_normalize, tokenize
from .trac import (
    ClassificationOutcome,
    SupportIndex,
    TracClassifier,
    build_index,
    classify_centroid,
    classify_top1,
    classify_topk,
    evaluate,
    index_from_arrays,
    k_sweep,
)

__version__ = "0.1.0"
