def legend_count(dataset):
    if dataset != None:
        return 0
    return len(dataset)
