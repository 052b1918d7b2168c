"""The pre-training loop: mask twice, encode once, reconstruct, update.

One step works on one batch: pollute the encoder input moderately, squeeze
the sentence through the embedding bottleneck, then ask the shallow
decoder to rebuild the sentence under its own aggressive masking. All
randomness flows from two generator streams derived from the config seed
(one for parameter init, one for mask draws), so a fixed seed fixes the
whole run, and a checkpoint carries enough state to resume mid-run on the
exact trajectory the uninterrupted run would have taken.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .checkpoint import LoadedCheckpoint, Progress, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .decoder import decode_basic, decode_enhanced
from .encoder import encode
from .masking import MaskedBatch, mask_batch, maskable_positions
from .model import DecoderConfig, EncoderConfig, ModelParams, init_params, output_logits
from .optim import AdamW, clip_global_norm, warmup_scale
from .text import Batch, Vocabulary, batch_iter, build_vocabulary, corpus_lines, load_corpus

GRAD_CLIP_NORM = 1.0
CHECKPOINT_NAME = "model.ckpt"
VOCAB_NAME = "vocab.txt"
LOG_NAME = "loss_log.tsv"


class TrainingDiverged(RuntimeError):
    """The loss stopped being a finite number."""


def batch_coverage(mbatch: MaskedBatch, mode: str) -> float:
    """Fraction of content tokens this step's loss touches."""
    content = 0
    covered = 0
    for row in range(mbatch.size):
        cand = maskable_positions(mbatch.ids[row])
        content += cand.size
        if mode == "basic":
            covered += int(mbatch.dec_masked[row].sum())
        else:
            covered += cand.size
    return covered / content


def step_loss(
    params: ModelParams,
    train: TrainConfig,
    enc_config: EncoderConfig,
    dec_config: DecoderConfig,
    mbatch: MaskedBatch,
) -> Tensor:
    """Forward pass for one already-masked batch, returning the scalar loss."""
    sentence, hidden = encode(params, enc_config, mbatch.enc_ids, mbatch.real)
    if train.mode == "basic":
        _, loss = decode_basic(params, dec_config, sentence, mbatch)
    else:
        _, loss = decode_enhanced(params, dec_config, sentence, mbatch)
    if train.encoder_mlm_weight > 0.0:
        B, L = mbatch.enc_ids.shape
        logits = output_logits(params, hidden)
        flat = ad.reshape(logits, (B * L, enc_config.vocab_size))
        aux = ad.cross_entropy(
            flat,
            mbatch.ids.reshape(-1),
            mbatch.enc_masked.reshape(-1).astype(np.int64),
        )
        loss = ad.add(loss, ad.scale(aux, train.encoder_mlm_weight))
    return loss


def train_step(
    params: ModelParams,
    optimizer: AdamW,
    train: TrainConfig,
    enc_config: EncoderConfig,
    dec_config: DecoderConfig,
    batch: Batch,
    rng: np.random.Generator,
    step: int,
) -> tuple[float, float]:
    """One full update. Returns (loss, coverage) for the log."""
    mbatch = mask_batch(batch, train.mode, train.mask_ratio_encoder, train.mask_ratio_decoder, rng)
    try:
        loss = step_loss(params, train, enc_config, dec_config, mbatch)
        params.zero_grads()
        ad.backward(loss)
    except NonFiniteError as e:
        raise TrainingDiverged(f"step {step}: {e}") from e
    grads = [ad.grad_or_zeros(t) for t in params.tensors()]
    clip_global_norm(grads, GRAD_CLIP_NORM)
    optimizer.step(params, lr_scale=warmup_scale(step, train.warmup_steps))
    return float(loss.data), batch_coverage(mbatch, train.mode)


def _epoch_seed(base_seed: int, epoch: int) -> list[int]:
    return [base_seed, 2, epoch]


def run_pretraining(
    corpus_path: str | Path,
    out_dir: str | Path,
    train: TrainConfig,
    enc_config: EncoderConfig,
    dec_config: DecoderConfig,
    resume_from: str | Path | None = None,
    stop_after_steps: int | None = None,
    checkpoint_every: int = 0,
) -> Path:
    """Train over the corpus and leave a checkpoint, vocabulary, and loss
    log in ``out_dir``. Returns the checkpoint path.

    ``resume_from`` picks up an earlier checkpoint and continues on the
    exact trajectory; ``stop_after_steps`` ends the run early after that
    global step count, which is how an interruption is simulated.
    """
    corpus_path = Path(corpus_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME

    if resume_from is not None:
        loaded: LoadedCheckpoint = load_checkpoint(resume_from)
        params = loaded.params
        train, enc_config, dec_config = loaded.train, loaded.encoder, loaded.decoder
        optimizer = loaded.optimizer
        mask_rng = loaded.rng
        progress = loaded.progress
        vocab = Vocabulary.load(Path(resume_from).parent / loaded.vocab_file)
    else:
        vocab = build_vocabulary(corpus_lines(corpus_path), enc_config.vocab_size)
        # the parameter table matches the vocabulary actually built, which
        # may come in under the configured cap on a small corpus
        enc_config = dataclasses.replace(enc_config, vocab_size=len(vocab))
        params = init_params(enc_config, dec_config, np.random.default_rng([train.seed, 0]))
        optimizer = AdamW(lr=train.learning_rate, weight_decay=train.weight_decay)
        mask_rng = np.random.default_rng([train.seed, 1])
        progress = Progress()
    vocab.save(out_dir / VOCAB_NAME)

    seqs = load_corpus(corpus_path, vocab, enc_config.max_len)

    def save(progress_now: Progress) -> None:
        save_checkpoint(
            ckpt_path,
            params,
            train,
            enc_config,
            dec_config,
            optimizer,
            mask_rng,
            progress_now,
            VOCAB_NAME,
        )

    with open(out_dir / LOG_NAME, "a", encoding="utf-8") as log:
        for epoch in range(progress.epoch, train.epochs):
            skip = progress.step_in_epoch if epoch == progress.epoch else 0
            batches = batch_iter(seqs, train.batch_size, _epoch_seed(train.seed, epoch))
            for index, batch in enumerate(batches):
                if index < skip:
                    continue
                step = progress.step + 1
                loss, coverage = train_step(
                    params, optimizer, train, enc_config, dec_config, batch, mask_rng, step
                )
                log.write(f"{step}\t{loss:.8f}\t{coverage:.6f}\n")
                progress = Progress(step=step, epoch=epoch, step_in_epoch=index + 1)
                if checkpoint_every and step % checkpoint_every == 0:
                    save(progress)
                if stop_after_steps is not None and step >= stop_after_steps:
                    save(progress)
                    return ckpt_path
            progress = Progress(step=progress.step, epoch=epoch + 1, step_in_epoch=0)
            save(progress)
    save(progress)
    return ckpt_path
