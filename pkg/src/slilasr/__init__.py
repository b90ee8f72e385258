"""Two-stage language-conditioned CTC speech recognition on a numpy autograd core."""
from .asr import VARIANTS, AsrConfig, AsrModel, asr_forward, asr_train, evaluate_asr, transcribe
from .conditioning import LanguageCode, film_apply, se_apply, se_film_apply, slil_apply
from .corpus import CorpusConfig, generate_corpus, ingest_features, write_features
from .lid import LidConfig, LidModel, lid_predict, lid_train
from .losses import cer, ctc_collapse, ctc_loss, greedy_decode

__version__ = "0.1.0"

__all__ = [
    "VARIANTS", "AsrConfig", "AsrModel", "asr_forward", "asr_train", "evaluate_asr",
    "transcribe", "LanguageCode", "film_apply", "se_apply", "se_film_apply", "slil_apply",
    "CorpusConfig", "generate_corpus", "ingest_features", "write_features", "LidConfig",
    "LidModel", "lid_predict", "lid_train", "cer", "ctc_collapse", "ctc_loss", "greedy_decode",
]
