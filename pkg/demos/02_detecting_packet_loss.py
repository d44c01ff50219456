"""
Catching packet-loss incidents
==============================

The student watches the stream one packet at a time. Its twin half predicts
the next packet and carries the LSTM state; its classifier labels each packet
from the packet's own features and the twin's output. Here everything runs
in memory on a 10k-packet stream and takes about a minute.
"""
import numpy as np

from kddt.data import (SyntheticConfig, chronological_split, generate_ood_stream, generate_synthetic_stream,
                       tokenize_many)
from kddt.evaluation import evaluate_run, extract_incidents
from kddt.lm import FeatureScaler, LMConfig, lm_train, packet_docs
from kddt.twin import DtmConfig, PacketArrays, detect_stream, train_dt
from kddt.vae import VaeConfig, vae_pretrain

syn = SyntheticConfig(n_packets=10000, seed=4)
train, test = chronological_split(generate_synthetic_stream(syn), 0.8)
ood = generate_ood_stream(syn, 800)
print(f"train: {len(train)} packets, {len(extract_incidents(train.labels))} incidents")
print(f"test:  {len(test)} packets, {len(extract_incidents(test.labels))} incidents")

# an incident silences a source: its signal bytes read 0 until it comes back
inc = extract_incidents(test.labels)[0]
for i in range(inc.start_idx - 1, inc.start_idx + 2):
    print(f"  packet {i} label {test.labels[i]}:", test.payloads[i].hex(" "))

# language model and teacher only ever see fault-free traffic
ood_ids, ood_len = tokenize_many(ood.payloads)
lm = lm_train(packet_docs(ood_ids, ood_len), LMConfig(epochs=2, seed=0)).model
scaler = FeatureScaler.fit(lm.pooled_features(ood_ids, ood_len))
teacher = vae_pretrain(scaler(lm.pooled_features(ood_ids, ood_len)), ood_ids, ood_len,
                       VaeConfig(epochs=5, seed=0)).model


def arrays(ds):
    ids, lengths = tokenize_many(ds.payloads)
    f = scaler(lm.pooled_features(ids, lengths))
    return PacketArrays(f, ids, lengths, ds.labels, ds.timestamps, teacher.teacher_targets(f))


train_arrays, test_arrays = arrays(train), arrays(test)

# the student distils the teacher's latent while learning the labels
res = train_dt(train_arrays, DtmConfig(seed=0))
print("student loss by epoch:", np.round(res.epoch_losses, 3))
last = res.breakdowns[-1]
print("last batch:", {k: round(v, 3) for k, v in last.items()})

# detection runs in stream order; the state could be handed to a later call
det = detect_stream(res.student, test_arrays.features)
run = evaluate_run("demo", 0, "full", det.labels, test.labels, test.timestamps)
p = run.packet
print(f"packets:   precision {p.precision:.3f} recall {p.recall:.3f} f1 {p.f1:.3f}")
m = run.incidents
print(f"incidents: C_I {m.c_i:.2f}, mean C_PI {m.mean_c_pi:.2f}, mean DTR_I {m.mean_dtr_i:.3f}, "
      f"RMSE_L {m.rmse_l:.2f}")
