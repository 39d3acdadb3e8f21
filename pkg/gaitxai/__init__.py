# Gait GRF sex classification with relevance explanations and SPM
