"""Zero-shot website fingerprinting by aligning site logic with encrypted traffic."""

from .core import (Direction, EncodingParams, FlowKey, HttpVersion, LogicMatrix, LogicProfile,
                   MimeCategory, PacketRecord, PairedSample, ResourceRecord, ScaleKind,
                   TrafficMatrix, TrafficTrace, normalize_scalar, Transport)
from .hpack_huffman import huffman_encoded_bits, huffman_encoded_len
from .ingest import (CaptureConfig, PcapStats, assign_flow_indices, infer_http_versions,
                     parse_packet_jsonl, parse_pcap, parse_resource_jsonl)
from .encoding import encode_logic, encode_traffic
from .synth import GenConfig, NoiseConfig, gen_corpus, gen_sites, simulate_visit
from .augment import AugConfig, augment_corpus, augment_pair
from .anchors import (aggregate_report, pearson, permutation_test, protocol_anchor,
                      request_anchor, response_anchor, wasserstein1)
from .retrieval import (FewShotMemory, Gallery, build_gallery, classify_zero_shot, dcor, fdr,
                        linear_probe_fit, open_world_eval, tip_adapter_logits, topk_accuracy)

__version__ = "0.1.0"
