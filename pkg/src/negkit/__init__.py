"""Toolkit for negation-aware vision-language training data and evaluation.

Submodules:
    negation   -- negation-term detection, tokenization, corpus statistics
    chat       -- chat-model clients (LLM / MLLM), templates, parsing, caching
    datagen    -- caption augmentation pipelines emitting training pairs
    triplets   -- hard-negative patch benchmark construction
    encoders   -- dual-encoder bundles, checkpoints, text-tower swapping
    finetune   -- contrastive text-tower fine-tuning with a frozen vision tower
    harness    -- scoring protocols and benchmark reports
    cli        -- command-line entry point
"""

__version__ = "0.1.0"
