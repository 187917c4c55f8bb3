"""Write a synthetic Drebin-style corpus (one feature file per app plus labels.csv)."""
import argparse
import dataclasses

from drebin_explain.synthetic import SyntheticConfig, make_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    for f in dataclasses.fields(SyntheticConfig):
        ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default))
    args = vars(ap.parse_args())
    out = args.pop("out_dir")
    corpus = make_corpus(**{k: v for k, v in args.items() if v is not None})
    manifest = corpus.write(out)
    ds = corpus.dataset
    print(f"{len(ds.samples)} apps, {corpus.vocabulary.dim} features, "
          f"{int((ds.labels == 1).sum())} malware -> {manifest}")


if __name__ == "__main__":
    main()
