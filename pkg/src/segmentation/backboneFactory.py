from src.segmentation.abstractBackbone import AbstractBackbone

def create_backbone(backbone: str, width: int = 32, stages: int = 4) -> AbstractBackbone:
    print("Creating backbone " + backbone + " (width " + str(width) + ", " + str(stages) + " stages)")

    if (backbone == "small"):
        from src.segmentation.smallBackbone import SmallBackbone
        return SmallBackbone(width=width, stages=stages)
    else:
        raise ValueError("Unknown backbone: " + backbone)
