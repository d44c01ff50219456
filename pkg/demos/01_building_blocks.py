"""
From bytes to latents
=====================

A walk through the pieces: a packet becomes tokens, the language model turns
tokens into features, the teacher encodes features into a Gaussian latent and
tries to rebuild the packet from it. Gradients come from a small
reverse-mode engine, checked here against finite differences.
"""
import numpy as np

from kddt import autodiff as ad
from kddt.data import SyntheticConfig, generate_synthetic_stream, tokenize_many, tokenize_packet
from kddt.lm import FeatureScaler, LanguageModel, LMConfig, lm_perplexity, lm_train, packet_docs
from kddt.vae import Vae, VaeConfig, reconstruction_accuracy, vae_pretrain

# a short synthetic capture: header bytes, then one byte per signal
stream = generate_synthetic_stream(SyntheticConfig(n_packets=600, anomaly_ratio=0.1, seed=2))
first = stream.packets[0]
print("packet 0 at", first.timestamp_us, "us:", first.payload.hex(" "))

# one token per byte, framed by BOS/EOS and padded to a fixed length
tp = tokenize_packet(first.payload)
print("tokens:", tp.ids[:tp.true_len].tolist(), "... padded to", len(tp.ids))

# the language model learns to predict the next byte inside a packet
ids, lengths = tokenize_many(stream.payloads)
docs = packet_docs(ids, lengths)
cfg = LMConfig(embed_dim=32, hidden_dim=32, context_len=16, epochs=2, seed=0)
untrained = lm_perplexity(LanguageModel(cfg), docs[:50])
lm = lm_train(docs, cfg).model
print(f"perplexity on 50 packets: {untrained:.1f} untrained, {lm_perplexity(lm, docs[:50]):.2f} trained")

# pooled LM features, standardised, feed the teacher
raw = lm.pooled_features(ids, lengths)
features = FeatureScaler.fit(raw)(raw)
vae = vae_pretrain(features, ids, lengths, VaeConfig(latent_dim=16, dec_dim=16, feature_dim=32, epochs=10)).model
enc = vae.encode(features[:3])
print("teacher mean latent, first packet:", np.round(enc.mu.data[0, :6], 3), "...")
print("sigma stays inside (0, 1):", float(enc.sigma.data.min()), float(enc.sigma.data.max()))
# header bytes come back exactly; noisy signal bytes mostly do not
print(f"greedy reconstruction accuracy: {reconstruction_accuracy(vae, features, ids, lengths):.3f}")

# every analytic gradient can be checked against central differences
small = VaeConfig(latent_dim=3, dec_dim=2, conv_channels=2, feature_dim=4, vocab_size=5, packet_len=4)
rng = np.random.default_rng(0)
f, tok, n, eps = rng.normal(size=(2, 4)), rng.integers(0, 5, (2, 4)), np.array([4, 2]), rng.normal(size=(2, 3))
report = ad.gradcheck(lambda s: ad.mean(Vae(small, s).loss(f, tok, n, eps)[0].total), Vae(small).params)
print(f"largest relative gradient error: {report.max_error:.1e}")
