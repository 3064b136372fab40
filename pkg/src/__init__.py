# Enhanced Interaction ViT - autodiferenciación numpy, ACP, CAT y harness de experimentos
