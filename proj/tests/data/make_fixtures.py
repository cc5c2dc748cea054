"""Regenerates the MAT-file and PACO fixtures under tests/data."""
import json
from pathlib import Path

import numpy as np
from scipy.io import savemat

HERE = Path(__file__).resolve().parent


def mat_fixtures():
    values = {
        "scalar": np.array(7.5),
        "ints": np.arange(1, 6, dtype=np.int32).reshape(1, 5),
        "matrix": np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
        "u8": np.array([[250, 3]], dtype=np.uint8),
        "word": "hello",
        "names": np.array(["n02085620-Chihuahua/a.jpg", "n02085782-Japanese_spaniel/b.jpg"], dtype=object).reshape(2, 1),
    }
    expected = {
        "scalar": 7.5,
        "ints": [1, 2, 3, 4, 5],
        "matrix_colmajor": [1.0, 4.0, 2.0, 5.0, 3.0, 6.0],
        "matrix_dims": [2, 3],
        "u8": [250, 3],
        "word": "hello",
        "names": ["n02085620-Chihuahua/a.jpg", "n02085782-Japanese_spaniel/b.jpg"],
    }
    for compressed in (False, True):
        savemat(HERE / f"basic_{'z' if compressed else 'raw'}.mat", values, do_compression=compressed)

    annos = np.zeros((1, 3), dtype=[("fname", object), ("class", object), ("bbox_x1", object)])
    for i, (name, cls) in enumerate([("00001.jpg", 3), ("00002.jpg", 1), ("00003.jpg", 196)]):
        annos[0, i] = (name, np.array([[cls]], dtype=np.uint8), np.array([[10 + i]], dtype=np.uint16))
    savemat(HERE / "struct_z.mat", {"annotations": annos}, do_compression=True)
    expected["struct"] = {"fname": ["00001.jpg", "00002.jpg", "00003.jpg"], "class": [3, 1, 196]}
    (HERE / "mat_expected.json").write_text(json.dumps(expected, indent=2) + "\n")


def paco_fixture():
    doc = {
        "images": [{"id": 1, "file_name": "mug_1.jpg"}, {"id": 2, "file_name": "chair_2.jpg"}],
        "categories": [
            {"id": 10, "name": "mug:handle"},
            {"id": 11, "name": "mug:body"},
            {"id": 12, "name": "chair:back_rest"},
            {"id": 13, "name": "mug"},
        ],
        "attributes": [
            {"id": 0, "name": "red", "type": "color"},
            {"id": 1, "name": "blue", "type": "color"},
            {"id": 2, "name": "white", "type": "color"},
            {"id": 3, "name": "ceramic", "type": "material"},
            {"id": 4, "name": "wood", "type": "material"},
            {"id": 5, "name": "striped", "type": "pattern_marking"},
            {"id": 6, "name": "plain", "type": "pattern_marking"},
            {"id": 7, "name": "shiny", "type": "reflectance"},
            {"id": 8, "name": "matte", "type": "reflectance"},
            {"id": 9, "name": "black,grey", "type": "color"},
        ],
        "annotations": [
            {"id": 100, "image_id": 1, "category_id": 10, "area": 4000.0, "attribute_ids": [0, 3, 7]},
            {"id": 101, "image_id": 1, "category_id": 11, "area": 9000.0, "attribute_ids": [1, 2, 3, 5]},
            {"id": 102, "image_id": 2, "category_id": 12, "area": 50000.0, "attribute_ids": [4, 9, 8]},
            {"id": 103, "image_id": 2, "category_id": 12, "area": 100.0, "attribute_ids": [4]},
            {"id": 104, "image_id": 1, "category_id": 13, "area": 20000.0, "attribute_ids": [2]},
        ],
    }
    (HERE / "paco_sample.json").write_text(json.dumps(doc, indent=1) + "\n")


def layout_fixtures():
    dogs = HERE / "layouts" / "dogs120"
    dogs.mkdir(parents=True, exist_ok=True)
    files = np.array(["n02085620-Chihuahua/n02085620_1.jpg", "n02113978-Mexican_hairless/n02113978_7.jpg",
                      "n02085620-Chihuahua/n02085620_9.jpg"], dtype=object).reshape(3, 1)
    savemat(dogs / "test_list.mat", {"file_list": files, "labels": np.array([[1], [120], [1]], dtype=np.uint8)},
            do_compression=True)

    flowers = HERE / "layouts" / "flowers102"
    flowers.mkdir(parents=True, exist_ok=True)
    labels = np.array([[77, 77, 1, 102, 5]], dtype=np.uint8)
    savemat(flowers / "imagelabels.mat", {"labels": labels})
    savemat(flowers / "setid.mat", {"trnid": np.array([[1]], dtype=np.uint16),
                                    "valid": np.array([[2]], dtype=np.uint16),
                                    "tstid": np.array([[3, 4, 5]], dtype=np.uint16)})

    cars = HERE / "layouts" / "cars196"
    cars.mkdir(parents=True, exist_ok=True)
    annos = np.zeros((1, 2), dtype=[("bbox_x1", object), ("bbox_y1", object), ("bbox_x2", object),
                                    ("bbox_y2", object), ("class", object), ("fname", object)])
    annos[0, 0] = (np.array([[30]]), np.array([[52]]), np.array([[246]]), np.array([[147]]),
                   np.array([[181]], dtype=np.uint8), "00001.jpg")
    annos[0, 1] = (np.array([[100]]), np.array([[19]]), np.array([[576]]), np.array([[203]]),
                   np.array([[1]], dtype=np.uint8), "00002.jpg")
    savemat(cars / "cars_test_annos_withlabels.mat", {"annotations": annos})


if __name__ == "__main__":
    mat_fixtures()
    layout_fixtures()
    paco_fixture()
