from .adapters import available_adapters, get_extractor, register_adapter
from .cache import CacheStats, FeatureCache, cache_key, get_or_extract
from .catalog import ExtractorCatalog, load_extractor_catalog
from .extractors import Extractor, SyntheticExtractor, chunked_encode, extract, make_synthetic_extractor
from .spec import ExtractorSpec, FeatureRecord, LayerSpec
