"""Packet ingestion, tokenisation, splitting and synthetic traffic."""
from .dataset import RawPacket, LabeledDataset, DatasetKind, chronological_split, apply_anomaly_windows, dataset_statistics
from .io import read_pcap, write_pcap, read_jsonl, write_jsonl, read_anomaly_windows, load_stream
from .vocab import Vocabulary, TokenizedPacket, tokenize_packet, tokenize_many, BYTE_VOCAB, PAD, BOS, EOS, UNK
from .synthetic import SyntheticConfig, generate_synthetic_stream, generate_ood_stream
